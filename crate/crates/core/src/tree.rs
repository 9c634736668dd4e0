//! The device management tree.
//!
//! Nodes are addressed by [`NodeUri`], carry the eight standard properties and are either
//! permanent (built into the device) or dynamic. Every mutating operation either succeeds
//! completely or leaves the tree untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acl::{Acl, CommandKind};
use crate::uri::NodeUri;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Node,
    Chr,
    Int,
    Bool,
    Bin,
    Xml,
}

impl Format {
    pub const ALL: [Format; 6] = [
        Format::Node,
        Format::Chr,
        Format::Int,
        Format::Bool,
        Format::Bin,
        Format::Xml,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Node => "node",
            Format::Chr => "chr",
            Format::Int => "int",
            Format::Bool => "bool",
            Format::Bin => "bin",
            Format::Xml => "xml",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Format::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown format {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Permanence {
    Permanent,
    Dynamic,
}

impl Permanence {
    pub fn as_str(self) -> &'static str {
        match self {
            Permanence::Permanent => "permanent",
            Permanence::Dynamic => "dynamic",
        }
    }
}

/// Who is acting on the tree. The device itself bypasses ACLs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Requester {
    Server(String),
    Device,
}

impl Requester {
    pub fn server(id: impl Into<String>) -> Self {
        Requester::Server(id.into())
    }
}

/// Source of modification timestamps. Timestamps have whole-second precision.
#[derive(Debug, Clone, Default)]
pub enum Clock {
    #[default]
    System,
    /// Shared manually-advanced clock holding unix seconds.
    Manual(Arc<AtomicI64>),
}

impl Clock {
    pub fn manual(start: DateTime<Utc>) -> Self {
        Clock::Manual(Arc::new(AtomicI64::new(start.timestamp())))
    }

    pub fn now(&self) -> DateTime<Utc> {
        let secs = match self {
            Clock::System => Utc::now().timestamp(),
            Clock::Manual(secs) => secs.load(Ordering::SeqCst),
        };
        Utc.timestamp_opt(secs, 0).single().unwrap_or_default()
    }

    /// Moves a manual clock forward; a no-op for the system clock.
    pub fn advance(&self, secs: i64) {
        if let Clock::Manual(cell) = self {
            cell.fetch_add(secs, Ordering::SeqCst);
        }
    }
}

pub fn format_tstamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeProperties {
    pub acl: Acl,
    pub format: Format,
    pub name: String,
    pub size: u64,
    pub title: String,
    pub tstamp: DateTime<Utc>,
    pub mime_type: String,
    pub verno: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Interior { children: BTreeMap<String, TreeNode> },
    Leaf { value: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub(crate) kind: NodeKind,
    pub(crate) props: NodeProperties,
    pub(crate) permanence: Permanence,
}

impl TreeNode {
    pub fn props(&self) -> &NodeProperties {
        &self.props
    }

    pub fn permanence(&self) -> Permanence {
        self.permanence
    }

    pub fn kind(&self) -> &NodeKind {
        &self.kind
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn value(&self) -> Option<&[u8]> {
        match &self.kind {
            NodeKind::Leaf { value } => Some(value),
            NodeKind::Interior { .. } => None,
        }
    }

    pub fn children(&self) -> Option<&BTreeMap<String, TreeNode>> {
        match &self.kind {
            NodeKind::Interior { children } => Some(children),
            NodeKind::Leaf { .. } => None,
        }
    }

    fn child(&self, name: &str) -> Option<&TreeNode> {
        self.children().and_then(|c| c.get(name))
    }

    fn child_mut(&mut self, name: &str) -> Option<&mut TreeNode> {
        match &mut self.kind {
            NodeKind::Interior { children } => children.get_mut(name),
            NodeKind::Leaf { .. } => None,
        }
    }

    fn contains_permanent(&self) -> bool {
        self.permanence == Permanence::Permanent
            || self
                .children()
                .is_some_and(|c| c.values().any(TreeNode::contains_permanent))
    }

    fn touch(&mut self, now: DateTime<Utc>) {
        self.props.verno += 1;
        self.props.tstamp = now;
    }

    /// Deep copy as dynamic nodes with fresh version and timestamp.
    fn fresh_copy(&self, name: &str, now: DateTime<Utc>) -> TreeNode {
        let kind = match &self.kind {
            NodeKind::Leaf { value } => NodeKind::Leaf { value: value.clone() },
            NodeKind::Interior { children } => NodeKind::Interior {
                children: children
                    .iter()
                    .map(|(n, c)| (n.clone(), c.fresh_copy(n, now)))
                    .collect(),
            },
        };
        TreeNode {
            kind,
            props: NodeProperties {
                name: name.to_string(),
                tstamp: now,
                verno: 0,
                ..self.props.clone()
            },
            permanence: Permanence::Dynamic,
        }
    }
}

/// What a caller asks [`ManagementTree::add`] to create.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub value: Option<Vec<u8>>,
    pub format: Format,
    pub mime_type: String,
    pub title: String,
    pub acl: Option<Acl>,
    pub permanence: Permanence,
}

impl NodeSpec {
    pub fn interior() -> Self {
        NodeSpec {
            value: None,
            format: Format::Node,
            mime_type: String::new(),
            title: String::new(),
            acl: None,
            permanence: Permanence::Dynamic,
        }
    }

    pub fn leaf(value: impl Into<Vec<u8>>, format: Format) -> Self {
        NodeSpec {
            value: Some(value.into()),
            format,
            mime_type: "text/plain".to_string(),
            title: String::new(),
            acl: None,
            permanence: Permanence::Dynamic,
        }
    }

    pub fn text(value: &str) -> Self {
        Self::leaf(value.as_bytes(), Format::Chr)
    }

    pub fn with_type(mut self, mime_type: impl Into<String>) -> Self {
        self.mime_type = mime_type.into();
        self
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = title.into();
        self
    }

    pub fn with_acl(mut self, acl: Acl) -> Self {
        self.acl = Some(acl);
        self
    }

    pub fn permanent(mut self) -> Self {
        self.permanence = Permanence::Permanent;
        self
    }
}

/// One requested change in a Replace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Replacement {
    Value(Vec<u8>),
    Title(String),
    Type(String),
    Acl(Acl),
    Format(Format),
    Name(String),
    Permanence(Permanence),
    Verno(u64),
    Tstamp(DateTime<Utc>),
    Size(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GetResult {
    ChildNames(Vec<String>),
    LeafValue {
        value: Vec<u8>,
        format: Format,
        mime_type: String,
        size: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("no node at {0}")]
    NotFound(NodeUri),
    #[error("node already exists at {0}")]
    AlreadyExists(NodeUri),
    #[error("parent of {0} is a leaf")]
    ParentIsLeaf(NodeUri),
    #[error("{kind} on {uri} not permitted")]
    PermissionDenied { uri: NodeUri, kind: CommandKind },
    #[error("property {0} cannot be replaced")]
    ImmutableProperty(&'static str),
    #[error("{0} is permanent")]
    PermanentNode(NodeUri),
    #[error("{0} is an interior node")]
    NotALeaf(NodeUri),
    #[error("format {format} does not match node kind")]
    FormatMismatch { format: Format },
    #[error("cannot copy {src} into its own subtree at {dst}")]
    SourceContainsDestination { src: NodeUri, dst: NodeUri },
}

#[derive(Debug, Clone)]
pub struct ManagementTree {
    pub(crate) root: TreeNode,
    pub(crate) device_id: String,
    pub(crate) clock: Clock,
}

impl PartialEq for ManagementTree {
    fn eq(&self, other: &Self) -> bool {
        self.device_id == other.device_id && self.root == other.root
    }
}

impl Eq for ManagementTree {}

impl ManagementTree {
    /// A tree holding only a permanent root with the given ACL.
    pub fn empty(device_id: impl Into<String>, root_acl: Acl, clock: Clock) -> Self {
        let now = clock.now();
        ManagementTree {
            root: TreeNode {
                kind: NodeKind::Interior {
                    children: BTreeMap::new(),
                },
                props: NodeProperties {
                    acl: root_acl,
                    format: Format::Node,
                    name: String::new(),
                    size: 0,
                    title: String::new(),
                    tstamp: now,
                    mime_type: String::new(),
                    verno: 0,
                },
                permanence: Permanence::Permanent,
            },
            device_id: device_id.into(),
            clock,
        }
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn set_clock(&mut self, clock: Clock) {
        self.clock = clock;
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    pub fn node(&self, uri: &NodeUri) -> Option<&TreeNode> {
        uri.segments().iter().try_fold(&self.root, |node, seg| node.child(seg))
    }

    fn node_mut(&mut self, uri: &NodeUri) -> Option<&mut TreeNode> {
        let mut node = &mut self.root;
        for seg in uri.segments() {
            node = node.child_mut(seg)?;
        }
        Some(node)
    }

    pub fn exists(&self, uri: &NodeUri) -> bool {
        self.node(uri).is_some()
    }

    /// Every node in pre-order with children in name order.
    pub fn walk(&self) -> Vec<(NodeUri, &TreeNode)> {
        fn visit<'a>(uri: NodeUri, node: &'a TreeNode, out: &mut Vec<(NodeUri, &'a TreeNode)>) {
            out.push((uri.clone(), node));
            if let Some(children) = node.children() {
                for (name, child) in children {
                    let child_uri = uri.child(name.clone()).expect("stored names are valid segments");
                    visit(child_uri, child, out);
                }
            }
        }
        let mut out = Vec::new();
        visit(NodeUri::root(), &self.root, &mut out);
        out
    }

    /// Effective-ACL check: the nearest node on the path from `uri` to the root whose ACL
    /// mentions `kind` decides. A missing node is never permitted.
    pub fn acl_check(&self, uri: &NodeUri, kind: CommandKind, server_id: &str) -> bool {
        if !self.exists(uri) {
            return false;
        }
        let mut current = Some(uri.clone());
        while let Some(at) = current {
            let node = self.node(&at).expect("ancestors of an existing node exist");
            if let Some(decision) = node.props.acl.permits(kind, server_id) {
                return decision;
            }
            current = at.parent();
        }
        false
    }

    fn authorize(&self, requester: &Requester, uri: &NodeUri, kind: CommandKind) -> Result<(), TreeError> {
        match requester {
            Requester::Device => Ok(()),
            Requester::Server(id) if self.acl_check(uri, kind, id) => Ok(()),
            Requester::Server(_) => Err(TreeError::PermissionDenied { uri: uri.clone(), kind }),
        }
    }

    pub fn get(&self, uri: &NodeUri, requester: &Requester) -> Result<GetResult, TreeError> {
        let node = self.node(uri).ok_or_else(|| TreeError::NotFound(uri.clone()))?;
        self.authorize(requester, uri, CommandKind::Get)?;
        Ok(match &node.kind {
            NodeKind::Interior { children } => GetResult::ChildNames(children.keys().cloned().collect()),
            NodeKind::Leaf { value } => GetResult::LeafValue {
                value: value.clone(),
                format: node.props.format,
                mime_type: node.props.mime_type.clone(),
                size: node.props.size,
            },
        })
    }

    /// Checks shared by add and copy for the would-be parent of `uri`.
    fn check_insert(&self, uri: &NodeUri, requester: &Requester) -> Result<NodeUri, TreeError> {
        let parent_uri = uri.parent().ok_or_else(|| TreeError::AlreadyExists(uri.clone()))?;
        let parent = self
            .node(&parent_uri)
            .ok_or_else(|| TreeError::NotFound(parent_uri.clone()))?;
        if parent.is_leaf() {
            return Err(TreeError::ParentIsLeaf(uri.clone()));
        }
        self.authorize(requester, &parent_uri, CommandKind::Add)?;
        if parent.child(uri.name()).is_some() {
            return Err(TreeError::AlreadyExists(uri.clone()));
        }
        Ok(parent_uri)
    }

    fn insert_child(&mut self, parent_uri: &NodeUri, node: TreeNode, now: DateTime<Utc>) {
        let parent = self.node_mut(parent_uri).expect("checked by check_insert");
        if let NodeKind::Interior { children } = &mut parent.kind {
            children.insert(node.props.name.clone(), node);
        }
        parent.touch(now);
    }

    pub fn add(&mut self, uri: &NodeUri, spec: NodeSpec, requester: &Requester) -> Result<(), TreeError> {
        let is_interior = spec.value.is_none();
        if is_interior != (spec.format == Format::Node) {
            return Err(TreeError::FormatMismatch { format: spec.format });
        }
        let parent_uri = self.check_insert(uri, requester)?;
        let now = self.clock.now();
        let (kind, size) = match spec.value {
            Some(value) => {
                let size = value.len() as u64;
                (NodeKind::Leaf { value }, size)
            }
            None => (
                NodeKind::Interior {
                    children: BTreeMap::new(),
                },
                0,
            ),
        };
        let node = TreeNode {
            kind,
            props: NodeProperties {
                acl: spec.acl.unwrap_or_default(),
                format: spec.format,
                name: uri.name().to_string(),
                size,
                title: spec.title,
                tstamp: now,
                mime_type: spec.mime_type,
                verno: 0,
            },
            permanence: spec.permanence,
        };
        self.insert_child(&parent_uri, node, now);
        Ok(())
    }

    pub fn replace(&mut self, uri: &NodeUri, changes: &[Replacement], requester: &Requester) -> Result<(), TreeError> {
        let node = self.node(uri).ok_or_else(|| TreeError::NotFound(uri.clone()))?;
        self.authorize(requester, uri, CommandKind::Replace)?;
        for change in changes {
            match change {
                Replacement::Name(_) => return Err(TreeError::ImmutableProperty("name")),
                Replacement::Permanence(_) => return Err(TreeError::ImmutableProperty("permanence")),
                Replacement::Verno(_) => return Err(TreeError::ImmutableProperty("verno")),
                Replacement::Tstamp(_) => return Err(TreeError::ImmutableProperty("tstamp")),
                Replacement::Size(_) => return Err(TreeError::ImmutableProperty("size")),
                Replacement::Value(_) if !node.is_leaf() => return Err(TreeError::NotALeaf(uri.clone())),
                Replacement::Format(_) if !node.is_leaf() => return Err(TreeError::ImmutableProperty("format")),
                Replacement::Format(Format::Node) => return Err(TreeError::FormatMismatch { format: Format::Node }),
                _ => {}
            }
        }
        let now = self.clock.now();
        let node = self.node_mut(uri).expect("checked above");
        for change in changes {
            match change {
                Replacement::Value(v) => {
                    node.props.size = v.len() as u64;
                    node.kind = NodeKind::Leaf { value: v.clone() };
                }
                Replacement::Title(t) => node.props.title = t.clone(),
                Replacement::Type(t) => node.props.mime_type = t.clone(),
                Replacement::Acl(a) => node.props.acl = a.clone(),
                Replacement::Format(f) => node.props.format = *f,
                _ => unreachable!("immutable properties rejected above"),
            }
        }
        node.touch(now);
        Ok(())
    }

    pub fn delete(&mut self, uri: &NodeUri, requester: &Requester) -> Result<(), TreeError> {
        let node = self.node(uri).ok_or_else(|| TreeError::NotFound(uri.clone()))?;
        self.authorize(requester, uri, CommandKind::Delete)?;
        if node.contains_permanent() {
            return Err(TreeError::PermanentNode(uri.clone()));
        }
        let parent_uri = uri.parent().expect("root is permanent");
        let now = self.clock.now();
        let parent = self.node_mut(&parent_uri).expect("parent of existing node");
        if let NodeKind::Interior { children } = &mut parent.kind {
            children.remove(uri.name());
        }
        parent.touch(now);
        Ok(())
    }

    pub fn copy(&mut self, src: &NodeUri, dst: &NodeUri, requester: &Requester) -> Result<(), TreeError> {
        if !self.exists(src) {
            return Err(TreeError::NotFound(src.clone()));
        }
        if dst.starts_with(src) {
            return Err(TreeError::SourceContainsDestination {
                src: src.clone(),
                dst: dst.clone(),
            });
        }
        self.authorize(requester, src, CommandKind::Get)?;
        let parent_uri = self.check_insert(dst, requester)?;
        let now = self.clock.now();
        let copy = self.node(src).expect("checked above").fresh_copy(dst.name(), now);
        self.insert_child(&parent_uri, copy, now);
        Ok(())
    }

    /// Device-side relocation that keeps node properties; used for lifecycle moves.
    pub(crate) fn relocate(&mut self, src: &NodeUri, dst: &NodeUri) -> Result<(), TreeError> {
        let node = self.node(src).ok_or_else(|| TreeError::NotFound(src.clone()))?;
        if node.contains_permanent() {
            return Err(TreeError::PermanentNode(src.clone()));
        }
        if dst.starts_with(src) {
            return Err(TreeError::SourceContainsDestination {
                src: src.clone(),
                dst: dst.clone(),
            });
        }
        let dst_parent = self.check_insert(dst, &Requester::Device)?;
        let mut moved = node.clone();
        moved.props.name = dst.name().to_string();
        self.delete(src, &Requester::Device)?;
        let now = self.clock.now();
        self.insert_child(&dst_parent, moved, now);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uri(s: &str) -> NodeUri {
        NodeUri::parse(s).unwrap()
    }

    fn sample() -> ManagementTree {
        let clock = Clock::manual(Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap());
        let mut t = ManagementTree::empty("dev", Acl::allow_all(), clock);
        let d = Requester::Device;
        t.add(&uri("./DevInfo"), NodeSpec::interior().permanent(), &d).unwrap();
        for (n, v) in [("DevId", "SIM-0001"), ("Man", "Acme"), ("Mod", "X1")] {
            t.add(&uri("./DevInfo").child(n).unwrap(), NodeSpec::text(v).permanent(), &d)
                .unwrap();
        }
        t.add(&uri("./Apps"), NodeSpec::interior(), &d).unwrap();
        t
    }

    #[test]
    fn get_interior_lists_sorted_children() {
        let t = sample();
        let r = t.get(&uri("./DevInfo"), &Requester::server("s")).unwrap();
        assert_eq!(
            r,
            GetResult::ChildNames(vec!["DevId".into(), "Man".into(), "Mod".into()])
        );
    }

    #[test]
    fn get_leaf_returns_value_and_meta() {
        let t = sample();
        match t.get(&uri("./DevInfo/DevId"), &Requester::server("s")).unwrap() {
            GetResult::LeafValue {
                value, format, size, ..
            } => {
                assert_eq!(value, b"SIM-0001");
                assert_eq!(format, Format::Chr);
                assert_eq!(size, 8);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            t.get(&uri("./NoSuch"), &Requester::server("s")),
            Err(TreeError::NotFound(uri("./NoSuch")))
        );
    }

    #[test]
    fn add_bumps_parent_and_starts_at_zero() {
        let mut t = sample();
        let before = t.node(&uri("./Apps")).unwrap().props.verno;
        t.add(&uri("./Apps/a"), NodeSpec::text("1"), &Requester::server("s"))
            .unwrap();
        assert_eq!(t.node(&uri("./Apps/a")).unwrap().props.verno, 0);
        assert_eq!(t.node(&uri("./Apps")).unwrap().props.verno, before + 1);
        assert_eq!(
            t.add(&uri("./Apps/a/b"), NodeSpec::text("x"), &Requester::Device),
            Err(TreeError::ParentIsLeaf(uri("./Apps/a/b")))
        );
        assert_eq!(
            t.add(&uri("./Apps/a"), NodeSpec::text("x"), &Requester::Device),
            Err(TreeError::AlreadyExists(uri("./Apps/a")))
        );
        assert_eq!(
            t.add(&uri("./Nope/a"), NodeSpec::text("x"), &Requester::Device),
            Err(TreeError::NotFound(uri("./Nope")))
        );
    }

    #[test]
    fn replace_always_bumps_verno() {
        let mut t = sample();
        let u = uri("./Apps/v");
        t.add(&u, NodeSpec::text("1.0"), &Requester::Device).unwrap();
        for _ in 0..3 {
            t.replace(&u, &[Replacement::Value(b"1.0".to_vec())], &Requester::Device)
                .unwrap();
        }
        assert_eq!(t.node(&u).unwrap().props.verno, 3);
        t.replace(&u, &[Replacement::Value(b"1.1".to_vec())], &Requester::Device)
            .unwrap();
        assert_eq!(t.node(&u).unwrap().props.verno, 4);
        assert_eq!(t.node(&u).unwrap().props.size, 3);
        assert_eq!(
            t.replace(&u, &[Replacement::Verno(9)], &Requester::Device),
            Err(TreeError::ImmutableProperty("verno"))
        );
        assert_eq!(t.node(&u).unwrap().props.verno, 4);
    }

    #[test]
    fn tstamp_follows_clock() {
        let mut t = sample();
        let u = uri("./Apps/v");
        t.add(&u, NodeSpec::text("1"), &Requester::Device).unwrap();
        t.clock().advance(5);
        t.replace(&u, &[Replacement::Title("v".into())], &Requester::Device)
            .unwrap();
        assert_eq!(format_tstamp(&t.node(&u).unwrap().props.tstamp), "2020-01-01T00:00:05Z");
    }

    #[test]
    fn permanent_nodes_survive_delete() {
        let mut t = sample();
        let before = t.clone();
        assert_eq!(
            t.delete(&uri("./DevInfo"), &Requester::Device),
            Err(TreeError::PermanentNode(uri("./DevInfo")))
        );
        assert_eq!(
            t.delete(&NodeUri::root(), &Requester::Device),
            Err(TreeError::PermanentNode(NodeUri::root()))
        );
        assert_eq!(t, before);
    }

    #[test]
    fn delete_removes_subtree() {
        let mut t = sample();
        t.add(&uri("./Apps/x"), NodeSpec::interior(), &Requester::Device)
            .unwrap();
        t.add(&uri("./Apps/x/y"), NodeSpec::text("1"), &Requester::Device)
            .unwrap();
        t.delete(&uri("./Apps/x"), &Requester::server("s")).unwrap();
        assert!(!t.exists(&uri("./Apps/x/y")));
    }

    #[test]
    fn delete_denied_without_grant() {
        let mut t = sample();
        let acl = Acl::new().with(CommandKind::Delete, ["srvA"]).unwrap();
        t.add(&uri("./Apps/x"), NodeSpec::text("1").with_acl(acl), &Requester::Device)
            .unwrap();
        let before = t.clone();
        assert!(matches!(
            t.delete(&uri("./Apps/x"), &Requester::server("srvB")),
            Err(TreeError::PermissionDenied { .. })
        ));
        assert_eq!(t, before);
        t.delete(&uri("./Apps/x"), &Requester::server("srvA")).unwrap();
    }

    #[test]
    fn copy_is_deep_dynamic_and_fresh() {
        let mut t = sample();
        t.copy(&uri("./DevInfo"), &uri("./Apps/Info"), &Requester::server("s"))
            .unwrap();
        let copy = t.node(&uri("./Apps/Info")).unwrap();
        assert_eq!(copy.permanence(), Permanence::Dynamic);
        assert_eq!(copy.children().unwrap().len(), 3);
        let leaf = t.node(&uri("./Apps/Info/DevId")).unwrap();
        assert_eq!(leaf.value().unwrap(), b"SIM-0001");
        assert_eq!(leaf.props.verno, 0);
        assert_eq!(leaf.props.name, "DevId");
        t.delete(&uri("./Apps/Info"), &Requester::Device).unwrap();
    }

    #[test]
    fn copy_into_own_subtree_rejected() {
        let mut t = sample();
        assert!(matches!(
            t.copy(&uri("./Apps"), &uri("./Apps/Y"), &Requester::Device),
            Err(TreeError::SourceContainsDestination { .. })
        ));
    }

    #[test]
    fn acl_inherits_per_command_kind() {
        let mut t = ManagementTree::empty("d", Acl::new(), Clock::System);
        let parent_acl = Acl::new().with(CommandKind::Delete, ["srvA"]).unwrap();
        t.add(
            &uri("./P"),
            NodeSpec::interior().with_acl(parent_acl),
            &Requester::Device,
        )
        .unwrap();
        let own = Acl::new()
            .with(CommandKind::Get, ["*"])
            .unwrap()
            .with(CommandKind::Exec, Vec::<String>::new())
            .unwrap();
        t.add(&uri("./P/n"), NodeSpec::text("v").with_acl(own), &Requester::Device)
            .unwrap();
        let n = uri("./P/n");
        assert!(t.acl_check(&n, CommandKind::Get, "anyone"));
        assert!(t.acl_check(&n, CommandKind::Delete, "srvA"));
        assert!(!t.acl_check(&n, CommandKind::Delete, "srvB"));
        assert!(!t.acl_check(&n, CommandKind::Exec, "srvA"));
        assert!(!t.acl_check(&n, CommandKind::Replace, "srvA"));
        assert!(!t.acl_check(&uri("./P/none"), CommandKind::Get, "srvA"));
    }
}
