//! A simulated device: its management tree, payload capacity and the command executor that
//! applies server packages to the tree.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acl::{Acl, CommandKind};
use crate::codec::{Credentials, DmCommand, DmItem, Meta};
use crate::repo::{MemoryRepository, PayloadSource};
use crate::scm::{self, app_scope, AppDescriptor, Location, ScmError};
use crate::status::StatusCode;
use crate::tree::{Clock, Format, GetResult, ManagementTree, NodeSpec, Replacement, Requester, TreeError};
use crate::uri::NodeUri;
use crate::xml::is_xml_text;

pub const DEFAULT_CAPACITY: u64 = 10 * 1024 * 1024;

pub const DEVINFO: &str = "./DevInfo";
pub const DEVDETAIL: &str = "./DevDetail";
pub const DMACC: &str = "./DMAcc";
pub const SESSION_COUNT: &str = "./DMAcc/SessionCount";

/// Seconds the simulated clock moves at the start of each session.
pub const SESSION_CLOCK_STEP: i64 = 60;

/// Static configuration a device tree is seeded from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    pub manufacturer: String,
    pub model: String,
    pub dm_version: String,
    pub language: String,
    pub device_type: String,
    pub oem: String,
    pub firmware: String,
    pub software: String,
    pub hardware: String,
    pub server_id: String,
    pub auth_name: String,
    pub auth_secret: String,
    pub capacity: u64,
}

impl DeviceProfile {
    pub fn new(device_id: &str, server_id: &str, auth_secret: &str) -> Self {
        DeviceProfile {
            device_id: device_id.to_string(),
            manufacturer: "SimWorks".into(),
            model: "S1".into(),
            dm_version: "1.2".into(),
            language: "en-US".into(),
            device_type: "phone".into(),
            oem: "SimWorks".into(),
            firmware: "1.0.0".into(),
            software: "1.0.0".into(),
            hardware: "rev-a".into(),
            server_id: server_id.to_string(),
            auth_name: device_id.to_string(),
            auth_secret: auth_secret.to_string(),
            capacity: DEFAULT_CAPACITY,
        }
    }
}

fn acl(s: &str) -> Acl {
    s.parse().expect("static acl")
}

/// The seeded tree: DevInfo, DevDetail, DMAcc and an empty SCM subtree.
pub fn default_tree(profile: &DeviceProfile, clock: Clock) -> ManagementTree {
    let mut t = ManagementTree::empty(profile.device_id.clone(), Acl::allow_all(), clock);
    let dev = Requester::Device;
    let read_only = acl("Get=*&Add=&Replace=&Delete=&Exec=");
    let mut add = |uri: &str, spec: NodeSpec| {
        t.add(&scm::uri(uri), spec.permanent(), &dev).expect("fixture node");
    };
    add(DEVINFO, NodeSpec::interior().with_acl(read_only.clone()));
    add("./DevInfo/DevId", NodeSpec::text(&profile.device_id));
    add("./DevInfo/Man", NodeSpec::text(&profile.manufacturer));
    add("./DevInfo/Mod", NodeSpec::text(&profile.model));
    add("./DevInfo/DmV", NodeSpec::text(&profile.dm_version));
    add("./DevInfo/Lang", NodeSpec::text(&profile.language));
    add(DEVDETAIL, NodeSpec::interior().with_acl(read_only.clone()));
    add("./DevDetail/DevTyp", NodeSpec::text(&profile.device_type));
    add("./DevDetail/OEM", NodeSpec::text(&profile.oem));
    add("./DevDetail/FwV", NodeSpec::text(&profile.firmware));
    add("./DevDetail/SwV", NodeSpec::text(&profile.software));
    add("./DevDetail/HwV", NodeSpec::text(&profile.hardware));
    add(DMACC, NodeSpec::interior().with_acl(read_only));
    add("./DMAcc/ServerID", NodeSpec::text(&profile.server_id));
    add("./DMAcc/AAuthName", NodeSpec::text(&profile.auth_name));
    add(
        "./DMAcc/AAuthSecret",
        NodeSpec::text(&profile.auth_secret).with_acl(acl("Get=&Replace=&Copy=")),
    );
    add(SESSION_COUNT, NodeSpec::leaf("0", Format::Int));
    add(
        scm::SCM,
        NodeSpec::interior().with_title("Software Component Management"),
    );
    add(scm::INVENTORY, NodeSpec::interior());
    add(scm::DELIVERED, NodeSpec::interior());
    add(scm::DEPLOYED, NodeSpec::interior());
    add(scm::DOWNLOAD, NodeSpec::interior());
    t
}

/// A fetched download waiting to be applied before the next session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedDownload {
    pub descriptor: AppDescriptor,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("device tree has no DevInfo leaves")]
    MissingDevInfo,
    #[error("device tree has no {0} leaf")]
    MissingAccount(&'static str),
}

#[derive(Debug, Clone)]
pub struct Device {
    pub(crate) tree: ManagementTree,
    pub(crate) capacity: u64,
    pub(crate) repo: Arc<dyn PayloadSource>,
    pub(crate) staged: Vec<StagedDownload>,
}

/// Outcome of executing one server command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Executed {
    pub code: StatusCode,
    pub results: Option<Vec<DmItem>>,
}

impl Executed {
    fn status(code: StatusCode) -> Self {
        Executed { code, results: None }
    }
}

fn code_of(r: Result<StatusCode, ScmError>) -> StatusCode {
    r.unwrap_or_else(|e| e.status())
}

impl Device {
    pub fn new(tree: ManagementTree, capacity: u64, repo: Arc<dyn PayloadSource>) -> Self {
        Device {
            tree,
            capacity,
            repo,
            staged: Vec::new(),
        }
    }

    /// Device with the default tree for `profile` and an empty repository.
    pub fn from_profile(profile: &DeviceProfile, clock: Clock) -> Self {
        Device::new(
            default_tree(profile, clock),
            profile.capacity,
            Arc::new(MemoryRepository::new()),
        )
    }

    pub fn with_repo(mut self, repo: Arc<dyn PayloadSource>) -> Self {
        self.repo = repo;
        self
    }

    pub fn tree(&self) -> &ManagementTree {
        &self.tree
    }

    pub fn tree_mut(&mut self) -> &mut ManagementTree {
        &mut self.tree
    }

    pub fn device_id(&self) -> &str {
        self.tree.device_id()
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn staged(&self) -> &[StagedDownload] {
        &self.staged
    }

    fn leaf_text(&self, uri: &str) -> Option<String> {
        match self.tree.get(&scm::uri(uri), &Requester::Device) {
            Ok(GetResult::LeafValue { value, .. }) => String::from_utf8(value).ok(),
            _ => None,
        }
    }

    pub fn server_id(&self) -> Result<String, DeviceError> {
        self.leaf_text("./DMAcc/ServerID")
            .ok_or(DeviceError::MissingAccount("ServerID"))
    }

    pub fn credentials(&self, session_id: &str) -> Result<Credentials, DeviceError> {
        let name = self
            .leaf_text("./DMAcc/AAuthName")
            .ok_or(DeviceError::MissingAccount("AAuthName"))?;
        let secret = self
            .leaf_text("./DMAcc/AAuthSecret")
            .ok_or(DeviceError::MissingAccount("AAuthSecret"))?;
        Ok(Credentials::basic(&name, &secret, session_id))
    }

    /// One item per DevInfo leaf, for the first client package.
    pub fn devinfo_items(&self) -> Result<Vec<DmItem>, DeviceError> {
        let base = scm::uri(DEVINFO);
        let names = match self.tree.get(&base, &Requester::Device) {
            Ok(GetResult::ChildNames(names)) => names,
            _ => return Err(DeviceError::MissingDevInfo),
        };
        let items: Vec<DmItem> = names
            .iter()
            .filter_map(|n| {
                let uri = base.child(n.as_str()).ok()?;
                let node = self.tree.node(&uri).filter(|n| n.is_leaf())?;
                let mut item = get_item(
                    &uri,
                    node.props().format,
                    &node.props().mime_type,
                    node.value().unwrap_or_default(),
                );
                item.target = item.source.take().and_then(|s| NodeUri::parse(&s).ok());
                Some(item)
            })
            .collect();
        if items.is_empty() {
            return Err(DeviceError::MissingDevInfo);
        }
        Ok(items)
    }

    /// Starts a session: applies staged downloads, steps the clock and bumps the session
    /// counter. Returns the new session id.
    pub fn begin_session(&mut self) -> String {
        self.complete_downloads();
        self.tree.clock().advance(SESSION_CLOCK_STEP);
        let count: u64 = self.leaf_text(SESSION_COUNT).and_then(|s| s.parse().ok()).unwrap_or(0) + 1;
        let uri = scm::uri(SESSION_COUNT);
        if self.tree.exists(&uri) {
            let _ = self.tree.replace(
                &uri,
                &[Replacement::Value(count.to_string().into_bytes())],
                &Requester::Device,
            );
        }
        format!("{}-{count:04}", self.device_id())
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.tree.clock().now()
    }

    /// Applies one server command. Each command is atomic: on failure the device is left as
    /// it was before the command.
    pub fn execute(&mut self, cmd: &DmCommand, server_id: &str) -> Executed {
        let who = Requester::server(server_id);
        match cmd {
            DmCommand::Get { items, .. } => self.exec_get(items, &who),
            DmCommand::Add { items, .. } => Executed::status(self.exec_add(items, &who)),
            DmCommand::Replace { items, .. } => Executed::status(self.exec_replace(items, &who)),
            DmCommand::Delete { items, .. } => Executed::status(self.exec_delete(items, &who)),
            DmCommand::Copy { items, .. } => Executed::status(self.exec_copy(items, &who)),
            DmCommand::Exec { item, .. } => {
                let code = match &item.target {
                    Some(target) => code_of(self.scm_exec(target, &who)),
                    None => StatusCode::NotFound,
                };
                Executed::status(code)
            }
            DmCommand::Alert { .. } | DmCommand::Results { .. } => Executed::status(StatusCode::NotAllowed),
            DmCommand::Status { .. } | DmCommand::Final => Executed::status(StatusCode::Ok),
        }
    }

    fn exec_get(&self, items: &[DmItem], who: &Requester) -> Executed {
        let mut out = Vec::new();
        for item in items {
            let Some(uri) = &item.target else {
                return Executed::status(StatusCode::NotFound);
            };
            match self.tree.get(uri, who) {
                Ok(GetResult::ChildNames(names)) => out.push(
                    DmItem {
                        source: Some(uri.to_string()),
                        ..Default::default()
                    }
                    .with_meta(Meta {
                        format: Some(Format::Node),
                        mime_type: None,
                        size: None,
                    })
                    .with_data(names.join("/")),
                ),
                Ok(GetResult::LeafValue {
                    value,
                    format,
                    mime_type,
                    ..
                }) => out.push(get_item(uri, format, &mime_type, &value)),
                Err(e) => return Executed::status((&e).into()),
            }
        }
        Executed {
            code: StatusCode::Ok,
            results: Some(out),
        }
    }

    fn exec_add(&mut self, items: &[DmItem], who: &Requester) -> StatusCode {
        let first = items.first().and_then(|i| i.target.as_ref());
        if let Some((location, app_id, [])) = first.and_then(app_scope) {
            let app_id = app_id.to_string();
            let root = first.expect("matched").clone();
            return code_of(self.scm_add(location, &root, &app_id, items, who));
        }
        if items
            .iter()
            .filter_map(|i| i.target.as_ref())
            .any(|t| app_scope(t).is_some())
        {
            return StatusCode::NotAllowed;
        }
        self.tree_batch(|t| {
            for item in items {
                let uri = item.target.as_ref().expect("validated");
                t.add(uri, spec_of(item), who)?;
            }
            Ok(())
        })
    }

    fn scm_add(
        &mut self,
        location: Location,
        root: &NodeUri,
        app_id: &str,
        items: &[DmItem],
        who: &Requester,
    ) -> Result<StatusCode, ScmError> {
        let paths = match location {
            Location::Delivered => scm::delivery_paths(),
            Location::Download => scm::registration_paths(),
            Location::Deployed => {
                return Err(ScmError::NotAllowed {
                    app_id: app_id.to_string(),
                    op: scm::Operation::Install,
                    reason: "deployed apps are created by Install".into(),
                })
            }
        };
        if let Requester::Server(id) = who {
            let base = location.base();
            if !self.tree.acl_check(&base, CommandKind::Add, id) {
                return Err(ScmError::PermissionDenied(base));
            }
        }
        if self.locate_app(app_id).is_some() {
            return Err(ScmError::AlreadyExists(app_id.to_string()));
        }
        let parsed = scm::parse_app_items(root, app_id, items, &paths)?;
        match location {
            Location::Delivered => {
                self.scm_deliver(&parsed.descriptor, &parsed.payload.unwrap_or_default())?;
            }
            _ => {
                self.scm_register_download(&parsed.descriptor)?;
            }
        }
        Ok(StatusCode::Ok)
    }

    fn exec_replace(&mut self, items: &[DmItem], who: &Requester) -> StatusCode {
        let targets: Vec<&NodeUri> = items.iter().filter_map(|i| i.target.as_ref()).collect();
        let scoped: Vec<_> = targets.iter().filter_map(|t| app_scope(t)).collect();
        if let Some((location, app_id, _)) = scoped.first() {
            let same_app = scoped.len() == targets.len() && scoped.iter().all(|(l, a, _)| l == location && a == app_id);
            if !same_app {
                return StatusCode::NotAllowed;
            }
            let app_id = app_id.to_string();
            let location = *location;
            return code_of(self.scm_replace(location, &app_id, items, who));
        }
        self.tree_batch(|t| {
            for item in items {
                let uri = item.target.as_ref().expect("validated");
                t.replace(uri, &replacements_of(item), who)?;
            }
            Ok(())
        })
    }

    fn scm_replace(
        &mut self,
        location: Location,
        app_id: &str,
        items: &[DmItem],
        who: &Requester,
    ) -> Result<StatusCode, ScmError> {
        let here = self
            .locate_app(app_id)
            .ok_or_else(|| ScmError::UnknownApp(app_id.to_string()))?;
        if let Requester::Server(id) = who {
            if !self.tree.acl_check(&here.root, CommandKind::Replace, id) {
                return Err(ScmError::PermissionDenied(here.root));
            }
        }
        let root = location.app_root(app_id)?;
        let parsed = scm::parse_app_items(&root, app_id, items, &scm::update_paths())?;
        self.scm_update(app_id, &parsed.descriptor, &parsed.payload.unwrap_or_default())
    }

    fn exec_delete(&mut self, items: &[DmItem], who: &Requester) -> StatusCode {
        if items
            .iter()
            .filter_map(|i| i.target.as_ref())
            .any(|t| app_scope(t).is_some())
        {
            return StatusCode::NotAllowed;
        }
        self.tree_batch(|t| {
            for item in items {
                t.delete(item.target.as_ref().expect("validated"), who)?;
            }
            Ok(())
        })
    }

    fn exec_copy(&mut self, items: &[DmItem], who: &Requester) -> StatusCode {
        if items
            .iter()
            .filter_map(|i| i.target.as_ref())
            .any(|t| app_scope(t).is_some())
        {
            return StatusCode::NotAllowed;
        }
        let mut pairs = Vec::new();
        for item in items {
            let Some(src) = item.source.as_deref().and_then(|s| NodeUri::parse(s).ok()) else {
                return StatusCode::NotFound;
            };
            pairs.push((src, item.target.clone().expect("validated")));
        }
        self.tree_batch(|t| {
            for (src, dst) in &pairs {
                t.copy(src, dst, who)?;
            }
            Ok(())
        })
    }

    fn tree_batch(&mut self, f: impl FnOnce(&mut ManagementTree) -> Result<(), TreeError>) -> StatusCode {
        match self.atomically(|d| f(&mut d.tree)) {
            Ok(()) => StatusCode::Ok,
            Err(e) => (&e).into(),
        }
    }
}

/// Results item for a leaf. Values that cannot travel as text are sent as bin.
fn get_item(uri: &NodeUri, format: Format, mime_type: &str, value: &[u8]) -> DmItem {
    let textual = format != Format::Bin && std::str::from_utf8(value).is_ok_and(is_xml_text);
    DmItem {
        source: Some(uri.to_string()),
        ..Default::default()
    }
    .with_meta(Meta {
        format: Some(if textual || format == Format::Bin {
            format
        } else {
            Format::Bin
        }),
        mime_type: Some(mime_type.to_string()),
        size: Some(value.len() as u64),
    })
    .with_data(value)
}

fn spec_of(item: &DmItem) -> NodeSpec {
    let meta = item.meta.clone().unwrap_or_default();
    let format = meta
        .format
        .unwrap_or(if item.data.is_some() { Format::Chr } else { Format::Node });
    let mut spec = if format == Format::Node && item.data.is_none() {
        NodeSpec::interior()
    } else {
        NodeSpec::leaf(item.data.clone().unwrap_or_default(), format)
    };
    if let Some(t) = meta.mime_type {
        spec = spec.with_type(t);
    }
    spec
}

fn replacements_of(item: &DmItem) -> Vec<Replacement> {
    let mut out = Vec::new();
    if let Some(meta) = &item.meta {
        if let Some(f) = meta.format {
            out.push(Replacement::Format(f));
        }
        if let Some(t) = &meta.mime_type {
            out.push(Replacement::Type(t.clone()));
        }
    }
    if let Some(d) = &item.data {
        out.push(Replacement::Value(d.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{AppState, Operation};
    use crate::tree_doc;

    fn device() -> Device {
        let clock = Clock::manual(DateTime::from_timestamp(1_700_000_000, 0).unwrap());
        Device::from_profile(&DeviceProfile::new("SIM-0001", "srv", "secret"), clock)
    }

    fn mail() -> (AppDescriptor, Vec<u8>) {
        let payload = vec![7u8; 10 * 1024];
        (
            AppDescriptor::for_payload("mail", "Mail", "1.0", "Acme", "application/java-archive", &payload),
            payload,
        )
    }

    #[test]
    fn fixture_has_standard_objects() {
        let d = device();
        let t = d.tree();
        for uri in [DEVINFO, DEVDETAIL, DMACC, scm::DELIVERED, scm::DEPLOYED, scm::DOWNLOAD] {
            assert!(t.exists(&scm::uri(uri)), "{uri}");
        }
        assert_eq!(d.devinfo_items().unwrap().len(), 5);
        let who = Requester::server("srv");
        assert!(t.get(&scm::uri("./DMAcc/AAuthSecret"), &who).is_err());
    }

    #[test]
    fn session_ids_count_up() {
        let mut d = device();
        assert_eq!(d.begin_session(), "SIM-0001-0001");
        assert_eq!(d.begin_session(), "SIM-0001-0002");
    }

    #[test]
    fn deliver_install_activate_remove() {
        let mut d = device();
        let (desc, payload) = mail();
        d.scm_deliver(&desc, &payload).unwrap();
        assert_eq!(d.scm_inventory()[0].state, AppState::Delivered);
        let who = Requester::server("srv");
        let op = |s: &str| NodeUri::parse(s).unwrap();
        assert_eq!(
            d.scm_exec(&op("./SCM/Inventory/Delivered/mail/Operations/Install"), &who),
            Ok(StatusCode::Ok)
        );
        assert_eq!(d.scm_inventory()[0].state, AppState::Inactive);
        assert_eq!(
            d.scm_exec(&op("./SCM/Inventory/Deployed/mail/Operations/Activate"), &who),
            Ok(StatusCode::Ok)
        );
        assert_eq!(
            d.scm_exec(&op("./SCM/Inventory/Deployed/mail/Operations/Activate"), &who)
                .unwrap_err()
                .status(),
            StatusCode::NotAllowed
        );
        assert_eq!(
            d.scm_exec(&op("./SCM/Inventory/Deployed/mail/Operations/Remove"), &who),
            Ok(StatusCode::Ok)
        );
        assert!(d.scm_inventory().is_empty());
    }

    #[test]
    fn capacity_gate_leaves_tree_unchanged() {
        let mut d = device();
        d.capacity = 64 * 1024;
        let payload = vec![1u8; 70 * 1024];
        let desc = AppDescriptor::for_payload("big", "Big", "1.0", "Acme", "application/octet-stream", &payload);
        let before = tree_doc::save(d.tree());
        assert!(matches!(
            d.scm_deliver(&desc, &payload),
            Err(ScmError::CapacityExceeded { .. })
        ));
        assert_eq!(tree_doc::save(d.tree()), before);
    }

    #[test]
    fn update_keeps_state_and_checks_origin() {
        let mut d = device();
        let (desc, payload) = mail();
        d.scm_deliver(&desc, &payload).unwrap();
        d.scm_perform("mail", Operation::Install).unwrap();
        d.scm_perform("mail", Operation::Activate).unwrap();
        let p2 = vec![8u8; 2048];
        let d2 = AppDescriptor::for_payload("mail", "Mail", "1.1", "Acme", "application/java-archive", &p2);
        assert_eq!(d.scm_update("mail", &d2, &p2), Ok(StatusCode::Ok));
        let inv = d.scm_inventory();
        assert_eq!((inv[0].state, inv[0].version.as_str()), (AppState::Active, "1.1"));
        assert_eq!(
            d.scm_update("mail", &d2, &p2).unwrap_err().status(),
            StatusCode::NotAllowed
        );
    }

    #[test]
    fn download_completes_at_next_session() {
        let repo = Arc::new(MemoryRepository::new());
        let payload = b"game bytes".to_vec();
        repo.insert("game.jar", payload.clone());
        let mut d = device().with_repo(repo);
        let desc = AppDescriptor::for_payload("game", "Game", "2.0", "Acme", "application/java-archive", &payload)
            .with_source("sim://repo/game.jar");
        d.scm_register_download(&desc).unwrap();
        let start = NodeUri::parse("./SCM/Download/game/Operations/Start").unwrap();
        assert_eq!(d.scm_exec(&start, &Requester::server("srv")), Ok(StatusCode::Accepted));
        assert_eq!(d.scm_inventory()[0].state, AppState::Downloadable);
        d.begin_session();
        let inv = d.scm_inventory();
        assert_eq!(
            (inv[0].state, inv[0].origin),
            (AppState::Delivered, scm::Origin::Download)
        );
    }

    #[test]
    fn delivery_add_through_executor() {
        let mut d = device();
        let (desc, payload) = mail();
        let items = scm::delivery_items(&desc, &payload).unwrap();
        assert_eq!(items.len(), 13);
        let add = DmCommand::Add { cmd_id: 1, items };
        assert_eq!(d.execute(&add, "srv").code, StatusCode::Ok);
        assert_eq!(d.execute(&add, "srv").code, StatusCode::AlreadyExists);
        let get = DmCommand::Get {
            cmd_id: 2,
            items: vec![DmItem::target(
                NodeUri::parse("./SCM/Inventory/Delivered/mail/Version").unwrap(),
            )],
        };
        let out = d.execute(&get, "srv");
        assert_eq!(out.results.unwrap()[0].data.as_deref(), Some(&b"1.0"[..]));
    }

    #[test]
    fn delete_of_permanent_node_is_405() {
        let mut d = device();
        let del = DmCommand::Delete {
            cmd_id: 1,
            items: vec![DmItem::target(NodeUri::parse("./SCM").unwrap())],
        };
        assert_eq!(d.execute(&del, "srv").code, StatusCode::NotAllowed);
    }
}
