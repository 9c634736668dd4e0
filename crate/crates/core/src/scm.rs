//! Software component management: the `./SCM` subtree and the application lifecycle.
//!
//! Layout:
//!
//! ```text
//! ./SCM/Download/<id>/{ID,Name,Version,Vendor,Type,Size,Hash,SourceURI}
//!                    /Operations/Start
//! ./SCM/Inventory/Delivered/<id>/{ID,Name,Version,Vendor,Type,Size,Hash,Data,Origin}
//!                               /Operations/{Install,Remove,Update}
//! ./SCM/Inventory/Deployed/<id>/{ID,Name,Version,Vendor,Type,Size,Hash,Data,Origin,State}
//!                              /Operations/{Activate,Deactivate,Remove,Update}
//! ```
//!
//! An application's state is read from its position, plus the `State` leaf once deployed.
//! `Origin` is maintained by the device and records whether the payload came from a DM
//! delivery or a download.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acl::CommandKind;
use crate::codec::{DmItem, Meta};
use crate::device::{Device, StagedDownload};
use crate::repo::FetchError;
use crate::status::StatusCode;
use crate::tree::{Format, GetResult, ManagementTree, NodeSpec, Replacement, Requester, TreeError};
use crate::uri::{is_valid_segment, NodeUri};

pub const SCM: &str = "./SCM";
pub const INVENTORY: &str = "./SCM/Inventory";
pub const DELIVERED: &str = "./SCM/Inventory/Delivered";
pub const DEPLOYED: &str = "./SCM/Inventory/Deployed";
pub const DOWNLOAD: &str = "./SCM/Download";

pub(crate) fn uri(s: &str) -> NodeUri {
    NodeUri::parse(s).expect("static uri")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDescriptor {
    pub app_id: String,
    pub name: String,
    pub version: String,
    pub vendor: String,
    pub payload_size: u64,
    pub payload_type: String,
    /// Lowercase hex SHA-256 of the payload.
    pub payload_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_uri: Option<String>,
}

pub fn payload_hash(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}

impl AppDescriptor {
    /// Descriptor whose size and hash describe `payload`.
    pub fn for_payload(
        app_id: &str,
        name: &str,
        version: &str,
        vendor: &str,
        payload_type: &str,
        payload: &[u8],
    ) -> Self {
        AppDescriptor {
            app_id: app_id.to_string(),
            name: name.to_string(),
            version: version.to_string(),
            vendor: vendor.to_string(),
            payload_size: payload.len() as u64,
            payload_type: payload_type.to_string(),
            payload_hash: payload_hash(payload),
            source_uri: None,
        }
    }

    pub fn with_source(mut self, uri: impl Into<String>) -> Self {
        self.source_uri = Some(uri.into());
        self
    }

    pub fn validate(&self) -> Result<(), ScmError> {
        let bad = |m: &str| Err(ScmError::InvalidDescriptor(format!("{}: {m}", self.app_id)));
        if !is_valid_segment(&self.app_id) {
            return bad("app_id is not a valid node name");
        }
        if self.version.is_empty() {
            return bad("version is empty");
        }
        if self.payload_hash.len() != 64
            || !self
                .payload_hash
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return bad("payload_hash must be 64 lowercase hex digits");
        }
        Ok(())
    }

    /// Checks a payload against the declared size and hash.
    pub fn check_payload(&self, payload: &[u8]) -> Result<(), ScmError> {
        if payload.len() as u64 != self.payload_size || payload_hash(payload) != self.payload_hash {
            return Err(ScmError::HashMismatch {
                app_id: self.app_id.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppState {
    Downloadable,
    Delivered,
    Inactive,
    Active,
}

impl AppState {
    pub const ALL: [AppState; 4] = [
        AppState::Downloadable,
        AppState::Delivered,
        AppState::Inactive,
        AppState::Active,
    ];
}

impl fmt::Display for AppState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AppState::Downloadable => "downloadable",
            AppState::Delivered => "delivered",
            AppState::Inactive => "inactive",
            AppState::Active => "active",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    DmServer,
    Download,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::DmServer => "dm_server",
            Origin::Download => "download",
        }
    }

    fn parse(s: &str) -> Option<Origin> {
        match s {
            "dm_server" => Some(Origin::DmServer),
            "download" => Some(Origin::Download),
            _ => None,
        }
    }
}

/// Lifecycle operations, each exposed as a leaf under an app's `Operations` node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operation {
    Start,
    Install,
    Activate,
    Deactivate,
    Remove,
    Update,
}

impl Operation {
    pub const ALL: [Operation; 6] = [
        Operation::Start,
        Operation::Install,
        Operation::Activate,
        Operation::Deactivate,
        Operation::Remove,
        Operation::Update,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Start => "Start",
            Operation::Install => "Install",
            Operation::Activate => "Activate",
            Operation::Deactivate => "Deactivate",
            Operation::Remove => "Remove",
            Operation::Update => "Update",
        }
    }
}

impl FromStr for Operation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Operation::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown operation {s:?}"))
    }
}

/// Operation nodes present for an app in `state`.
pub fn operations_for(state: AppState) -> &'static [Operation] {
    match state {
        AppState::Downloadable => &[Operation::Start],
        AppState::Delivered => &[Operation::Install, Operation::Remove, Operation::Update],
        AppState::Inactive | AppState::Active => &[
            Operation::Activate,
            Operation::Deactivate,
            Operation::Remove,
            Operation::Update,
        ],
    }
}

/// Whether `op` is a legal transition from `state`. Update is further gated by origin.
pub fn transition_allowed(state: AppState, op: Operation) -> bool {
    use AppState::*;
    use Operation::*;
    matches!(
        (state, op),
        (Downloadable, Start)
            | (Delivered, Install)
            | (Delivered, Remove)
            | (Delivered, Update)
            | (Inactive, Activate)
            | (Inactive, Remove)
            | (Inactive, Update)
            | (Active, Deactivate)
            | (Active, Remove)
            | (Active, Update)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Download,
    Delivered,
    Deployed,
}

impl Location {
    pub fn base(self) -> NodeUri {
        uri(match self {
            Location::Download => DOWNLOAD,
            Location::Delivered => DELIVERED,
            Location::Deployed => DEPLOYED,
        })
    }

    pub fn app_root(self, app_id: &str) -> Result<NodeUri, ScmError> {
        self.base()
            .child(app_id)
            .map_err(|_| ScmError::InvalidDescriptor(format!("invalid app id {app_id:?}")))
    }
}

/// Splits a uri inside an application subtree into (location, app id, remaining segments).
pub fn app_scope(target: &NodeUri) -> Option<(Location, &str, &[String])> {
    let segs = target.segments();
    match segs {
        [scm, download, id, rest @ ..] if scm == "SCM" && download == "Download" => {
            Some((Location::Download, id, rest))
        }
        [scm, inv, place, id, rest @ ..] if scm == "SCM" && inv == "Inventory" => {
            let loc = match place.as_str() {
                "Delivered" => Location::Delivered,
                "Deployed" => Location::Deployed,
                _ => return None,
            };
            Some((loc, id, rest))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryEntry {
    pub app_id: String,
    pub name: String,
    pub version: String,
    pub state: AppState,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScmError {
    #[error("application {0} already exists")]
    AlreadyExists(String),
    #[error("payload of {app_id} does not match its size and hash")]
    HashMismatch { app_id: String },
    #[error("payload needs {needed} bytes, {free} free")]
    CapacityExceeded { needed: u64, free: u64 },
    #[error("download descriptor lacks a source uri")]
    MissingSourceUri,
    #[error("unknown application {0}")]
    UnknownApp(String),
    #[error("{0} is not an operation node")]
    UnknownOperation(NodeUri),
    #[error("{op:?} not allowed for {app_id}: {reason}")]
    NotAllowed {
        app_id: String,
        op: Operation,
        reason: String,
    },
    #[error("{0} not permitted")]
    PermissionDenied(NodeUri),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("payload fetch failed: {0}")]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

impl ScmError {
    pub fn status(&self) -> StatusCode {
        match self {
            ScmError::AlreadyExists(_) => StatusCode::AlreadyExists,
            ScmError::UnknownApp(_) | ScmError::UnknownOperation(_) => StatusCode::NotFound,
            ScmError::NotAllowed { .. } => StatusCode::NotAllowed,
            ScmError::PermissionDenied(_) => StatusCode::PermissionDenied,
            ScmError::HashMismatch { .. }
            | ScmError::CapacityExceeded { .. }
            | ScmError::MissingSourceUri
            | ScmError::InvalidDescriptor(_)
            | ScmError::Fetch(_) => StatusCode::Failed,
            ScmError::Tree(e) => e.into(),
        }
    }
}

// Item layouts shared by job compilation on the server and the device-side parser.

const DESCRIPTOR_LEAVES: [&str; 7] = ["ID", "Name", "Version", "Vendor", "Type", "Size", "Hash"];

fn descriptor_value<'a>(d: &'a AppDescriptor, leaf: &str) -> std::borrow::Cow<'a, str> {
    match leaf {
        "ID" => d.app_id.as_str().into(),
        "Name" => d.name.as_str().into(),
        "Version" => d.version.as_str().into(),
        "Vendor" => d.vendor.as_str().into(),
        "Type" => d.payload_type.as_str().into(),
        "Size" => d.payload_size.to_string().into(),
        "Hash" => d.payload_hash.as_str().into(),
        "SourceURI" => d.source_uri.as_deref().unwrap_or("").into(),
        _ => unreachable!("not a descriptor leaf: {leaf}"),
    }
}

fn leaf_format(leaf: &str) -> Format {
    if leaf == "Size" {
        Format::Int
    } else {
        Format::Chr
    }
}

fn text_item(target: NodeUri, leaf: &str, value: &str) -> DmItem {
    DmItem::target(target)
        .with_meta(Meta {
            format: Some(leaf_format(leaf)),
            mime_type: Some("text/plain".into()),
            size: None,
        })
        .with_data(value.as_bytes())
}

fn node_item(target: NodeUri) -> DmItem {
    DmItem::target(target).with_meta(Meta {
        format: Some(Format::Node),
        mime_type: None,
        size: None,
    })
}

fn data_item(target: NodeUri, d: &AppDescriptor, payload: &[u8]) -> DmItem {
    DmItem::target(target)
        .with_meta(Meta {
            format: Some(Format::Bin),
            mime_type: Some(d.payload_type.clone()),
            size: Some(payload.len() as u64),
        })
        .with_data(payload)
}

fn app_items(
    root: &NodeUri,
    d: &AppDescriptor,
    leaves: &[&str],
    payload: Option<&[u8]>,
    ops: &[Operation],
) -> Vec<DmItem> {
    let mut items = vec![node_item(root.clone())];
    for leaf in leaves {
        items.push(text_item(
            root.join(leaf).expect("static"),
            leaf,
            &descriptor_value(d, leaf),
        ));
    }
    if let Some(p) = payload {
        items.push(data_item(root.join("Data").expect("static"), d, p));
    }
    let ops_root = root.join("Operations").expect("static");
    items.push(node_item(ops_root.clone()));
    for op in ops {
        items.push(text_item(ops_root.join(op.as_str()).expect("static"), op.as_str(), ""));
    }
    items
}

/// Items of the Add that delivers an application into `Inventory/Delivered`.
pub fn delivery_items(d: &AppDescriptor, payload: &[u8]) -> Result<Vec<DmItem>, ScmError> {
    d.validate()?;
    let root = Location::Delivered.app_root(&d.app_id)?;
    Ok(app_items(
        &root,
        d,
        &DESCRIPTOR_LEAVES,
        Some(payload),
        operations_for(AppState::Delivered),
    ))
}

/// Items of the Add that registers a downloadable application under `Download`.
pub fn registration_items(d: &AppDescriptor) -> Result<Vec<DmItem>, ScmError> {
    d.validate()?;
    let root = Location::Download.app_root(&d.app_id)?;
    let mut leaves = DESCRIPTOR_LEAVES.to_vec();
    leaves.push("SourceURI");
    Ok(app_items(
        &root,
        d,
        &leaves,
        None,
        operations_for(AppState::Downloadable),
    ))
}

/// Items of the Replace that updates an application's descriptor leaves and payload.
pub fn update_items(location: Location, d: &AppDescriptor, payload: &[u8]) -> Result<Vec<DmItem>, ScmError> {
    d.validate()?;
    let root = location.app_root(&d.app_id)?;
    let mut items: Vec<DmItem> = DESCRIPTOR_LEAVES[1..]
        .iter()
        .map(|leaf| text_item(root.join(leaf).expect("static"), leaf, &descriptor_value(d, leaf)))
        .collect();
    items.push(data_item(root.join("Data").expect("static"), d, payload));
    Ok(items)
}

/// Parsed form of an app-shaped item list.
pub(crate) struct AppItems {
    pub descriptor: AppDescriptor,
    pub payload: Option<Vec<u8>>,
}

fn malformed(msg: impl Into<String>) -> ScmError {
    ScmError::InvalidDescriptor(msg.into())
}

/// Reads descriptor leaves out of items rooted at `root`; `expected` lists every relative
/// path (empty string for the root) that must appear exactly once.
pub(crate) fn parse_app_items(
    root: &NodeUri,
    app_id: &str,
    items: &[DmItem],
    expected: &[String],
) -> Result<AppItems, ScmError> {
    let mut seen = std::collections::BTreeMap::new();
    for item in items {
        let target = item.target.as_ref().ok_or_else(|| malformed("item without target"))?;
        let rel = target
            .strip_prefix(root)
            .ok_or_else(|| malformed(format!("{target} outside {root}")))?
            .join("/");
        if !expected.contains(&rel) {
            return Err(malformed(format!("unexpected node {target}")));
        }
        if seen.insert(rel, item).is_some() {
            return Err(malformed(format!("duplicate node {target}")));
        }
    }
    if let Some(missing) = expected.iter().find(|e| !seen.contains_key(*e)) {
        return Err(malformed(format!("missing node {missing:?} under {root}")));
    }
    let text = |leaf: &str| -> Result<String, ScmError> {
        match seen.get(leaf) {
            None => Ok(String::new()),
            Some(item) => String::from_utf8(item.data.clone().unwrap_or_default())
                .map_err(|_| malformed(format!("{leaf} is not text"))),
        }
    };
    if seen.contains_key("ID") && text("ID")? != app_id {
        return Err(malformed("ID leaf does not match node name"));
    }
    let size = if seen.contains_key("Size") {
        text("Size")?.parse().map_err(|_| malformed("Size is not a number"))?
    } else {
        0
    };
    let source = text("SourceURI")?;
    let descriptor = AppDescriptor {
        app_id: app_id.to_string(),
        name: text("Name")?,
        version: text("Version")?,
        vendor: text("Vendor")?,
        payload_size: size,
        payload_type: text("Type")?,
        payload_hash: text("Hash")?,
        source_uri: (!source.is_empty()).then_some(source),
    };
    let payload = seen.get("Data").map(|i| i.data.clone().unwrap_or_default());
    Ok(AppItems { descriptor, payload })
}

pub(crate) fn expected_paths(leaves: &[&str], with_data: bool, ops: &[Operation]) -> Vec<String> {
    let mut out = vec![String::new()];
    out.extend(leaves.iter().map(|l| l.to_string()));
    if with_data {
        out.push("Data".into());
    }
    out.push("Operations".into());
    out.extend(ops.iter().map(|o| format!("Operations/{}", o.as_str())));
    out
}

pub(crate) fn delivery_paths() -> Vec<String> {
    expected_paths(&DESCRIPTOR_LEAVES, true, operations_for(AppState::Delivered))
}

pub(crate) fn registration_paths() -> Vec<String> {
    let mut leaves = DESCRIPTOR_LEAVES.to_vec();
    leaves.push("SourceURI");
    expected_paths(&leaves, false, operations_for(AppState::Downloadable))
}

pub(crate) fn update_paths() -> Vec<String> {
    let mut out: Vec<String> = DESCRIPTOR_LEAVES[1..].iter().map(|s| s.to_string()).collect();
    out.push("Data".into());
    out
}

/// Read access used by inventory classification; satisfied by a live tree or by results
/// collected remotely.
pub trait TreeReader {
    fn read(&self, uri: &NodeUri) -> Option<GetResult>;
}

impl TreeReader for ManagementTree {
    fn read(&self, uri: &NodeUri) -> Option<GetResult> {
        self.get(uri, &Requester::Device).ok()
    }
}

fn read_children(reader: &dyn TreeReader, uri: &NodeUri) -> Vec<String> {
    match reader.read(uri) {
        Some(GetResult::ChildNames(names)) => names,
        _ => Vec::new(),
    }
}

fn read_text(reader: &dyn TreeReader, uri: &NodeUri) -> Option<String> {
    match reader.read(uri) {
        Some(GetResult::LeafValue { value, .. }) => String::from_utf8(value).ok(),
        _ => None,
    }
}

/// Leaves read per application when classifying.
fn inventory_leaves(location: Location) -> &'static [&'static str] {
    match location {
        Location::Download => &["Name", "Version"],
        Location::Delivered => &["Name", "Version", "Origin"],
        Location::Deployed => &["Name", "Version", "Origin", "State"],
    }
}

/// Classifies every application reachable through `reader`, sorted by app id.
pub fn classify_inventory(reader: &dyn TreeReader) -> Vec<InventoryEntry> {
    let mut out = Vec::new();
    for location in [Location::Download, Location::Delivered, Location::Deployed] {
        for app_id in read_children(reader, &location.base()) {
            let Ok(root) = location.app_root(&app_id) else { continue };
            let leaf = |name: &str| read_text(reader, &root.child(name).expect("static")).unwrap_or_default();
            let (state, origin) = match location {
                Location::Download => (AppState::Downloadable, Origin::Download),
                Location::Delivered => (
                    AppState::Delivered,
                    Origin::parse(&leaf("Origin")).unwrap_or(Origin::DmServer),
                ),
                Location::Deployed => {
                    let state = if leaf("State") == "active" {
                        AppState::Active
                    } else {
                        AppState::Inactive
                    };
                    (state, Origin::parse(&leaf("Origin")).unwrap_or(Origin::DmServer))
                }
            };
            out.push(InventoryEntry {
                app_id,
                name: leaf("Name"),
                version: leaf("Version"),
                state,
                origin,
            });
        }
    }
    out.sort_by(|a, b| a.app_id.cmp(&b.app_id));
    out
}

/// Gets a remote inventory crawl issues after receiving `result` for `at`.
pub fn inventory_followups(at: &NodeUri, result: &GetResult) -> Vec<NodeUri> {
    let GetResult::ChildNames(children) = result else {
        return Vec::new();
    };
    let location = if *at == uri(INVENTORY) {
        return children
            .iter()
            .filter(|c| matches!(c.as_str(), "Delivered" | "Deployed"))
            .filter_map(|c| at.child(c.as_str()).ok())
            .collect();
    } else if *at == uri(DOWNLOAD) {
        Location::Download
    } else if *at == uri(DELIVERED) {
        Location::Delivered
    } else if *at == uri(DEPLOYED) {
        Location::Deployed
    } else {
        return Vec::new();
    };
    children
        .iter()
        .filter_map(|id| location.app_root(id).ok())
        .flat_map(|root| {
            inventory_leaves(location)
                .iter()
                .map(move |leaf| root.child(*leaf).expect("static"))
        })
        .collect()
}

/// Where an application currently lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppLocation {
    pub location: Location,
    pub root: NodeUri,
    pub state: AppState,
    pub origin: Origin,
}

impl Device {
    pub fn locate_app(&self, app_id: &str) -> Option<AppLocation> {
        for location in [Location::Download, Location::Delivered, Location::Deployed] {
            let Ok(root) = location.app_root(app_id) else {
                return None;
            };
            if !self.tree.exists(&root) {
                continue;
            }
            let leaf = |name: &str| read_text(&self.tree, &root.child(name).expect("static")).unwrap_or_default();
            let (state, origin) = match location {
                Location::Download => (AppState::Downloadable, Origin::Download),
                Location::Delivered => (
                    AppState::Delivered,
                    Origin::parse(&leaf("Origin")).unwrap_or(Origin::DmServer),
                ),
                Location::Deployed => (
                    if leaf("State") == "active" {
                        AppState::Active
                    } else {
                        AppState::Inactive
                    },
                    Origin::parse(&leaf("Origin")).unwrap_or(Origin::DmServer),
                ),
            };
            return Some(AppLocation {
                location,
                root,
                state,
                origin,
            });
        }
        None
    }

    /// Payload bytes held by delivered and deployed apps plus staged downloads.
    pub fn used_capacity(&self) -> u64 {
        let stored: u64 = [Location::Delivered, Location::Deployed]
            .into_iter()
            .flat_map(|loc| {
                let base = loc.base();
                read_children(&self.tree, &base)
                    .into_iter()
                    .filter_map(move |id| base.join(&format!("{id}/Data")).ok())
            })
            .filter_map(|data| self.tree.node(&data).map(|n| n.props().size))
            .sum();
        stored + self.staged.iter().map(|s| s.payload.len() as u64).sum::<u64>()
    }

    pub fn free_capacity(&self) -> u64 {
        self.capacity.saturating_sub(self.used_capacity())
    }

    fn ensure_capacity(&self, needed: u64) -> Result<(), ScmError> {
        let free = self.free_capacity();
        if needed > free {
            return Err(ScmError::CapacityExceeded { needed, free });
        }
        Ok(())
    }

    fn write_app(
        &mut self,
        location: Location,
        d: &AppDescriptor,
        payload: Option<&[u8]>,
        origin: Origin,
    ) -> Result<NodeUri, ScmError> {
        let root = location.app_root(&d.app_id)?;
        let dev = Requester::Device;
        let t = &mut self.tree;
        t.add(&root, NodeSpec::interior().with_title(d.name.clone()), &dev)?;
        let mut leaves = DESCRIPTOR_LEAVES.to_vec();
        if location == Location::Download {
            leaves.push("SourceURI");
        }
        for leaf in leaves {
            let spec = NodeSpec::leaf(descriptor_value(d, leaf).as_bytes(), leaf_format(leaf));
            t.add(&root.child(leaf).expect("static"), spec, &dev)?;
        }
        if let Some(p) = payload {
            let spec = NodeSpec::leaf(p, Format::Bin).with_type(d.payload_type.clone());
            t.add(&root.child("Data").expect("static"), spec, &dev)?;
        }
        if location != Location::Download {
            t.add(
                &root.child("Origin").expect("static"),
                NodeSpec::text(origin.as_str()),
                &dev,
            )?;
        }
        let state = match location {
            Location::Download => AppState::Downloadable,
            Location::Delivered => AppState::Delivered,
            Location::Deployed => AppState::Inactive,
        };
        if location == Location::Deployed {
            t.add(&root.child("State").expect("static"), NodeSpec::text("inactive"), &dev)?;
        }
        let ops = root.child("Operations").expect("static");
        t.add(&ops, NodeSpec::interior(), &dev)?;
        for op in operations_for(state) {
            t.add(&ops.child(op.as_str()).expect("static"), NodeSpec::text(""), &dev)?;
        }
        Ok(root)
    }

    /// Stores a delivered application under `Inventory/Delivered`.
    pub fn scm_deliver(&mut self, d: &AppDescriptor, payload: &[u8]) -> Result<NodeUri, ScmError> {
        self.deliver_with_origin(d, payload, Origin::DmServer)
    }

    fn deliver_with_origin(&mut self, d: &AppDescriptor, payload: &[u8], origin: Origin) -> Result<NodeUri, ScmError> {
        d.validate()?;
        if self.locate_app(&d.app_id).is_some() {
            return Err(ScmError::AlreadyExists(d.app_id.clone()));
        }
        d.check_payload(payload)?;
        self.ensure_capacity(d.payload_size)?;
        self.atomically(|dev| dev.write_app(Location::Delivered, d, Some(payload), origin))
    }

    pub fn scm_register_download(&mut self, d: &AppDescriptor) -> Result<NodeUri, ScmError> {
        d.validate()?;
        if self.locate_app(&d.app_id).is_some() {
            return Err(ScmError::AlreadyExists(d.app_id.clone()));
        }
        if d.source_uri.as_deref().is_none_or(str::is_empty) {
            return Err(ScmError::MissingSourceUri);
        }
        self.atomically(|dev| dev.write_app(Location::Download, d, None, Origin::Download))
    }

    pub fn scm_inventory(&self) -> Vec<InventoryEntry> {
        classify_inventory(&self.tree)
    }

    fn read_descriptor(&self, root: &NodeUri, app_id: &str) -> AppDescriptor {
        let leaf = |name: &str| read_text(&self.tree, &root.child(name).expect("static")).unwrap_or_default();
        let source = leaf("SourceURI");
        AppDescriptor {
            app_id: app_id.to_string(),
            name: leaf("Name"),
            version: leaf("Version"),
            vendor: leaf("Vendor"),
            payload_size: leaf("Size").parse().unwrap_or(0),
            payload_type: leaf("Type"),
            payload_hash: leaf("Hash"),
            source_uri: (!source.is_empty()).then_some(source),
        }
    }

    /// Runs `f` and restores the previous device state if it fails.
    pub(crate) fn atomically<T, E>(&mut self, f: impl FnOnce(&mut Device) -> Result<T, E>) -> Result<T, E> {
        let tree = self.tree.clone();
        let staged = self.staged.clone();
        let out = f(self);
        if out.is_err() {
            self.tree = tree;
            self.staged = staged;
        }
        out
    }

    /// Executes a lifecycle operation named by an operation-node uri.
    ///
    /// The app is found by id; the location segment in the uri does not have to match the
    /// app's current position. Unknown operation paths and unknown apps give 404, ACL
    /// failures 425, and transitions not allowed from the current state 405.
    pub fn scm_exec(&mut self, op_uri: &NodeUri, requester: &Requester) -> Result<StatusCode, ScmError> {
        let unknown = || ScmError::UnknownOperation(op_uri.clone());
        let (_, app_id, rest) = app_scope(op_uri).ok_or_else(unknown)?;
        let op: Operation = match rest {
            [ops, name] if ops == "Operations" => name.parse().map_err(|_| unknown())?,
            _ => return Err(unknown()),
        };
        let app_id = app_id.to_string();
        let here = self
            .locate_app(&app_id)
            .ok_or_else(|| ScmError::UnknownApp(app_id.clone()))?;
        if let Requester::Server(id) = requester {
            let node = here.root.join(&format!("Operations/{}", op.as_str())).expect("static");
            let checked = if self.tree.exists(&node) {
                node
            } else {
                here.root.clone()
            };
            if !self.tree.acl_check(&checked, CommandKind::Exec, id) {
                return Err(ScmError::PermissionDenied(checked));
            }
        }
        self.scm_perform(&app_id, op)
    }

    /// Applies `op` to an app, checking only the lifecycle rules.
    pub fn scm_perform(&mut self, app_id: &str, op: Operation) -> Result<StatusCode, ScmError> {
        let here = self
            .locate_app(app_id)
            .ok_or_else(|| ScmError::UnknownApp(app_id.to_string()))?;
        let not_allowed = |reason: &str| ScmError::NotAllowed {
            app_id: app_id.to_string(),
            op,
            reason: reason.to_string(),
        };
        if !transition_allowed(here.state, op) {
            return Err(not_allowed(&format!("not allowed while {}", here.state)));
        }
        let dev = Requester::Device;
        match op {
            Operation::Update => Err(not_allowed(
                "updates are applied by replacing the descriptor leaves and Data",
            )),
            Operation::Start => {
                if self.staged.iter().any(|s| s.descriptor.app_id == app_id) {
                    return Err(not_allowed("download already in progress"));
                }
                let d = self.read_descriptor(&here.root, app_id);
                let source = d.source_uri.clone().ok_or(ScmError::MissingSourceUri)?;
                let payload = self.repo.fetch(&source)?;
                d.check_payload(&payload)?;
                self.ensure_capacity(payload.len() as u64)?;
                self.staged.push(StagedDownload { descriptor: d, payload });
                Ok(StatusCode::Accepted)
            }
            Operation::Install => self.atomically(|device| {
                let dst = Location::Deployed.app_root(app_id)?;
                let t = &mut device.tree;
                t.relocate(&here.root, &dst)?;
                let ops = dst.child("Operations").expect("static");
                t.delete(&ops.child("Install").expect("static"), &dev)?;
                for op in [Operation::Activate, Operation::Deactivate] {
                    t.add(&ops.child(op.as_str()).expect("static"), NodeSpec::text(""), &dev)?;
                }
                t.add(&dst.child("State").expect("static"), NodeSpec::text("inactive"), &dev)?;
                Ok(StatusCode::Ok)
            }),
            Operation::Activate | Operation::Deactivate => {
                let value = if op == Operation::Activate {
                    "active"
                } else {
                    "inactive"
                };
                let state = here.root.child("State").expect("static");
                self.tree.replace(&state, &[Replacement::Value(value.into())], &dev)?;
                Ok(StatusCode::Ok)
            }
            Operation::Remove => {
                self.tree.delete(&here.root, &dev)?;
                self.staged.retain(|s| s.descriptor.app_id != app_id);
                Ok(StatusCode::Ok)
            }
        }
    }

    /// Replaces an application's descriptor leaves and payload, keeping its state.
    pub fn scm_update(&mut self, app_id: &str, d: &AppDescriptor, payload: &[u8]) -> Result<StatusCode, ScmError> {
        let here = self
            .locate_app(app_id)
            .ok_or_else(|| ScmError::UnknownApp(app_id.to_string()))?;
        let not_allowed = |reason: &str| ScmError::NotAllowed {
            app_id: app_id.to_string(),
            op: Operation::Update,
            reason: reason.to_string(),
        };
        if !transition_allowed(here.state, Operation::Update) {
            return Err(not_allowed(&format!("not allowed while {}", here.state)));
        }
        if here.origin != Origin::DmServer {
            return Err(not_allowed(
                "only applications delivered by the DM server can be updated",
            ));
        }
        if d.app_id != app_id {
            return Err(not_allowed("descriptor names a different application"));
        }
        d.validate()?;
        let current = self.read_descriptor(&here.root, app_id);
        if current.version == d.version {
            return Err(not_allowed("version unchanged"));
        }
        d.check_payload(payload)?;
        let old_size = self
            .tree
            .node(&here.root.child("Data").expect("static"))
            .map(|n| n.props().size)
            .unwrap_or(0);
        self.ensure_capacity(d.payload_size.saturating_sub(old_size))?;
        self.atomically(|device| {
            let dev = Requester::Device;
            for leaf in &DESCRIPTOR_LEAVES[1..] {
                let value = descriptor_value(d, leaf).into_owned().into_bytes();
                device.tree.replace(
                    &here.root.child(*leaf).expect("static"),
                    &[Replacement::Value(value)],
                    &dev,
                )?;
            }
            device.tree.replace(
                &here.root.child("Data").expect("static"),
                &[
                    Replacement::Value(payload.to_vec()),
                    Replacement::Type(d.payload_type.clone()),
                ],
                &dev,
            )?;
            Ok(StatusCode::Ok)
        })
    }

    /// Applies staged downloads: each becomes a delivered app with download origin.
    pub fn complete_downloads(&mut self) -> Vec<(String, Result<NodeUri, ScmError>)> {
        let staged = std::mem::take(&mut self.staged);
        let mut out = Vec::new();
        for s in staged {
            let app_id = s.descriptor.app_id.clone();
            let result = match self.locate_app(&app_id) {
                Some(here) if here.state == AppState::Downloadable => self.atomically(|device| {
                    device.tree.delete(&here.root, &Requester::Device)?;
                    device.deliver_with_origin(&s.descriptor, &s.payload, Origin::Download)
                }),
                _ => Err(ScmError::UnknownApp(app_id.clone())),
            };
            out.push((app_id, result));
        }
        out
    }
}
