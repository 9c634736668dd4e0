//! Flat-map reference model of the management tree and a random command generator.
//!
//! The model keeps every node in a map keyed by its path and re-derives parent/child
//! relations by scanning keys. It shares no code with the real tree beyond the public
//! input types.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use scm_forge_core::acl::Acl;
use scm_forge_core::tree::{Clock, Format, GetResult, NodeSpec, Permanence, Replacement, TreeError};
use scm_forge_core::{ManagementTree, NodeUri, Requester};

const KINDS: [&str; 6] = ["Get", "Add", "Replace", "Delete", "Copy", "Exec"];
const NAMES: [&str; 3] = ["a", "b", "c"];
const SERVERS: [&str; 2] = ["srvA", "srvB"];

type Path = Vec<String>;

#[derive(Debug, Clone, PartialEq, Eq)]
struct FlatNode {
    value: Option<Vec<u8>>,
    format: String,
    mime: String,
    title: String,
    acl: BTreeMap<String, BTreeSet<String>>,
    permanent: bool,
    verno: u64,
    tstamp: i64,
}

/// Observable state of one node, comparable between the model and the real tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeSnapshot {
    pub uri: String,
    pub value: Option<Vec<u8>>,
    pub format: String,
    pub mime: String,
    pub title: String,
    pub acl: String,
    pub permanent: bool,
    pub verno: u64,
    pub tstamp: i64,
    pub size: u64,
}

/// Who issues a command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Who {
    Device,
    Server(&'static str),
}

impl Who {
    pub fn requester(&self) -> Requester {
        match self {
            Who::Device => Requester::Device,
            Who::Server(id) => Requester::server(*id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Change {
    Value(Vec<u8>),
    Title(String),
    Type(String),
    Acl(String),
    Format(&'static str),
    Name,
    Verno,
    Size,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeOp {
    Get {
        uri: Path,
        who: Who,
    },
    Add {
        uri: Path,
        value: Option<Vec<u8>>,
        format: &'static str,
        acl: Option<String>,
        permanent: bool,
        who: Who,
    },
    Replace {
        uri: Path,
        changes: Vec<Change>,
        who: Who,
    },
    Delete {
        uri: Path,
        who: Who,
    },
    Copy {
        src: Path,
        dst: Path,
        who: Who,
    },
}

/// Error kind or the observable result of a command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpResult {
    Done,
    Children(Vec<String>),
    Leaf {
        value: Vec<u8>,
        format: String,
        mime: String,
        size: u64,
    },
    Err(&'static str),
}

fn render_uri(p: &[String]) -> String {
    if p.is_empty() {
        ".".to_string()
    } else {
        format!("./{}", p.join("/"))
    }
}

fn parse_acl(s: &str) -> BTreeMap<String, BTreeSet<String>> {
    let mut out = BTreeMap::new();
    for part in s.split('&').filter(|p| !p.is_empty()) {
        let (k, ids) = part.split_once('=').expect("generated acl");
        out.insert(
            k.to_string(),
            ids.split('+').filter(|i| !i.is_empty()).map(String::from).collect(),
        );
    }
    out
}

fn render_acl(acl: &BTreeMap<String, BTreeSet<String>>) -> String {
    KINDS
        .iter()
        .filter_map(|k| {
            acl.get(*k)
                .map(|ids| format!("{k}={}", ids.iter().cloned().collect::<Vec<_>>().join("+")))
        })
        .collect::<Vec<_>>()
        .join("&")
}

/// The reference model.
#[derive(Debug, Clone)]
pub struct FlatTree {
    nodes: BTreeMap<Path, FlatNode>,
}

impl FlatTree {
    pub fn new(root_acl: &str, now: i64) -> Self {
        let root = FlatNode {
            value: None,
            format: "node".into(),
            mime: String::new(),
            title: String::new(),
            acl: parse_acl(root_acl),
            permanent: true,
            verno: 0,
            tstamp: now,
        };
        FlatTree {
            nodes: BTreeMap::from([(Vec::new(), root)]),
        }
    }

    fn children(&self, p: &[String]) -> Vec<String> {
        self.nodes
            .keys()
            .filter(|k| k.len() == p.len() + 1 && k.starts_with(p))
            .map(|k| k.last().expect("non-root").clone())
            .collect()
    }

    fn subtree(&self, p: &[String]) -> Vec<Path> {
        self.nodes.keys().filter(|k| k.starts_with(p)).cloned().collect()
    }

    fn allowed(&self, p: &[String], kind: &str, who: &Who) -> bool {
        let Who::Server(id) = who else { return true };
        if !self.nodes.contains_key(p) {
            return false;
        }
        for len in (0..=p.len()).rev() {
            if let Some(ids) = self.nodes[&p[..len]].acl.get(kind) {
                return ids.contains("*") || ids.contains(*id);
            }
        }
        false
    }

    fn touch(&mut self, p: &[String], now: i64) {
        let n = self.nodes.get_mut(p).expect("touched node exists");
        n.verno += 1;
        n.tstamp = now;
    }

    /// Parent checks shared by add and copy.
    fn insert_check(&self, p: &[String], who: &Who) -> Result<(), &'static str> {
        if p.is_empty() {
            return Err("AlreadyExists");
        }
        let parent = &p[..p.len() - 1];
        let Some(pn) = self.nodes.get(parent) else {
            return Err("NotFound");
        };
        if pn.value.is_some() {
            return Err("ParentIsLeaf");
        }
        if !self.allowed(parent, "Add", who) {
            return Err("PermissionDenied");
        }
        if self.nodes.contains_key(p) {
            return Err("AlreadyExists");
        }
        Ok(())
    }

    pub fn apply(&mut self, op: &TreeOp, now: i64) -> OpResult {
        match self.try_apply(op, now) {
            Ok(r) => r,
            Err(e) => OpResult::Err(e),
        }
    }

    fn try_apply(&mut self, op: &TreeOp, now: i64) -> Result<OpResult, &'static str> {
        match op {
            TreeOp::Get { uri, who } => {
                let n = self.nodes.get(uri).ok_or("NotFound")?;
                if !self.allowed(uri, "Get", who) {
                    return Err("PermissionDenied");
                }
                Ok(match &n.value {
                    None => OpResult::Children(self.children(uri)),
                    Some(v) => OpResult::Leaf {
                        value: v.clone(),
                        format: n.format.clone(),
                        mime: n.mime.clone(),
                        size: v.len() as u64,
                    },
                })
            }
            TreeOp::Add {
                uri,
                value,
                format,
                acl,
                permanent,
                who,
            } => {
                if value.is_none() != (*format == "node") {
                    return Err("FormatMismatch");
                }
                self.insert_check(uri, who)?;
                self.nodes.insert(
                    uri.clone(),
                    FlatNode {
                        value: value.clone(),
                        format: format.to_string(),
                        mime: if value.is_some() {
                            "text/plain".into()
                        } else {
                            String::new()
                        },
                        title: String::new(),
                        acl: acl.as_deref().map(parse_acl).unwrap_or_default(),
                        permanent: *permanent,
                        verno: 0,
                        tstamp: now,
                    },
                );
                self.touch(&uri[..uri.len() - 1], now);
                Ok(OpResult::Done)
            }
            TreeOp::Replace { uri, changes, who } => {
                let n = self.nodes.get(uri).ok_or("NotFound")?;
                if !self.allowed(uri, "Replace", who) {
                    return Err("PermissionDenied");
                }
                let leaf = n.value.is_some();
                for c in changes {
                    match c {
                        Change::Name | Change::Verno | Change::Size => return Err("ImmutableProperty"),
                        Change::Value(_) if !leaf => return Err("NotALeaf"),
                        Change::Format(_) if !leaf => return Err("ImmutableProperty"),
                        Change::Format("node") => return Err("FormatMismatch"),
                        _ => {}
                    }
                }
                let n = self.nodes.get_mut(uri).expect("checked");
                for c in changes {
                    match c {
                        Change::Value(v) => n.value = Some(v.clone()),
                        Change::Title(t) => n.title = t.clone(),
                        Change::Type(t) => n.mime = t.clone(),
                        Change::Acl(a) => n.acl = parse_acl(a),
                        Change::Format(f) => n.format = f.to_string(),
                        _ => unreachable!(),
                    }
                }
                self.touch(uri, now);
                Ok(OpResult::Done)
            }
            TreeOp::Delete { uri, who } => {
                if !self.nodes.contains_key(uri) {
                    return Err("NotFound");
                }
                if !self.allowed(uri, "Delete", who) {
                    return Err("PermissionDenied");
                }
                let doomed = self.subtree(uri);
                if doomed.iter().any(|p| self.nodes[p].permanent) {
                    return Err("PermanentNode");
                }
                for p in doomed {
                    self.nodes.remove(&p);
                }
                self.touch(&uri[..uri.len() - 1], now);
                Ok(OpResult::Done)
            }
            TreeOp::Copy { src, dst, who } => {
                if !self.nodes.contains_key(src) {
                    return Err("NotFound");
                }
                if dst.starts_with(src) {
                    return Err("SourceContainsDestination");
                }
                if !self.allowed(src, "Get", who) {
                    return Err("PermissionDenied");
                }
                self.insert_check(dst, who)?;
                for p in self.subtree(src) {
                    let mut n = self.nodes[&p].clone();
                    n.permanent = false;
                    n.verno = 0;
                    n.tstamp = now;
                    let mut target = dst.clone();
                    target.extend_from_slice(&p[src.len()..]);
                    self.nodes.insert(target, n);
                }
                self.touch(&dst[..dst.len() - 1], now);
                Ok(OpResult::Done)
            }
        }
    }

    pub fn snapshot(&self) -> Vec<NodeSnapshot> {
        self.nodes
            .iter()
            .map(|(p, n)| NodeSnapshot {
                uri: render_uri(p),
                value: n.value.clone(),
                format: n.format.clone(),
                mime: n.mime.clone(),
                title: n.title.clone(),
                acl: render_acl(&n.acl),
                permanent: n.permanent,
                verno: n.verno,
                tstamp: n.tstamp,
                size: n.value.as_ref().map_or(0, |v| v.len() as u64),
            })
            .collect()
    }
}

fn to_uri(p: &[String]) -> NodeUri {
    NodeUri::from_segments(p.iter().cloned()).expect("generated segments")
}

fn error_kind(e: &TreeError) -> &'static str {
    match e {
        TreeError::NotFound(_) => "NotFound",
        TreeError::AlreadyExists(_) => "AlreadyExists",
        TreeError::ParentIsLeaf(_) => "ParentIsLeaf",
        TreeError::PermissionDenied { .. } => "PermissionDenied",
        TreeError::ImmutableProperty(_) => "ImmutableProperty",
        TreeError::PermanentNode(_) => "PermanentNode",
        TreeError::NotALeaf(_) => "NotALeaf",
        TreeError::FormatMismatch { .. } => "FormatMismatch",
        TreeError::SourceContainsDestination { .. } => "SourceContainsDestination",
    }
}

fn format_of(s: &str) -> Format {
    s.parse().expect("generated format")
}

/// Applies `op` to the real tree, reporting the result in the model's terms.
pub fn apply_real(tree: &mut ManagementTree, op: &TreeOp) -> OpResult {
    let r = match op {
        TreeOp::Get { uri, who } => match tree.get(&to_uri(uri), &who.requester()) {
            Ok(GetResult::ChildNames(c)) => return OpResult::Children(c),
            Ok(GetResult::LeafValue {
                value,
                format,
                mime_type,
                size,
            }) => {
                return OpResult::Leaf {
                    value,
                    format: format.as_str().to_string(),
                    mime: mime_type,
                    size,
                }
            }
            Err(e) => Err(e),
        },
        TreeOp::Add {
            uri,
            value,
            format,
            acl,
            permanent,
            who,
        } => {
            let mut spec = match value {
                Some(v) => NodeSpec::leaf(v.clone(), format_of(format)),
                None => {
                    let mut s = NodeSpec::interior();
                    s.format = format_of(format);
                    s
                }
            };
            if let Some(a) = acl {
                spec = spec.with_acl(a.parse::<Acl>().expect("generated acl"));
            }
            if *permanent {
                spec = spec.permanent();
            }
            tree.add(&to_uri(uri), spec, &who.requester())
        }
        TreeOp::Replace { uri, changes, who } => {
            let changes: Vec<Replacement> = changes
                .iter()
                .map(|c| match c {
                    Change::Value(v) => Replacement::Value(v.clone()),
                    Change::Title(t) => Replacement::Title(t.clone()),
                    Change::Type(t) => Replacement::Type(t.clone()),
                    Change::Acl(a) => Replacement::Acl(a.parse().expect("generated acl")),
                    Change::Format(f) => Replacement::Format(format_of(f)),
                    Change::Name => Replacement::Name("renamed".into()),
                    Change::Verno => Replacement::Verno(99),
                    Change::Size => Replacement::Size(1),
                })
                .collect();
            tree.replace(&to_uri(uri), &changes, &who.requester())
        }
        TreeOp::Delete { uri, who } => tree.delete(&to_uri(uri), &who.requester()),
        TreeOp::Copy { src, dst, who } => tree.copy(&to_uri(src), &to_uri(dst), &who.requester()),
    };
    match r {
        Ok(()) => OpResult::Done,
        Err(e) => OpResult::Err(error_kind(&e)),
    }
}

pub fn snapshot_real(tree: &ManagementTree) -> Vec<NodeSnapshot> {
    let mut out: Vec<NodeSnapshot> = tree
        .walk()
        .into_iter()
        .map(|(uri, n)| {
            let p = n.props();
            NodeSnapshot {
                uri: uri.to_string(),
                value: n.value().map(<[u8]>::to_vec),
                format: p.format.as_str().to_string(),
                mime: p.mime_type.clone(),
                title: p.title.clone(),
                acl: p.acl.to_string(),
                permanent: n.permanence() == Permanence::Permanent,
                verno: p.verno,
                tstamp: p.tstamp.timestamp(),
                size: p.size,
            }
        })
        .collect();
    out.sort_by_key(|a| path_key(&a.uri));
    out
}

fn path_key(uri: &str) -> Path {
    uri.strip_prefix("./")
        .map(|r| r.split('/').map(String::from).collect())
        .unwrap_or_default()
}

fn random_path<R: Rng>(rng: &mut R) -> Path {
    let depth = rng.random_range(0..4);
    (0..depth)
        .map(|_| NAMES.choose(rng).expect("non-empty").to_string())
        .collect()
}

/// Mostly an existing path of `model`, sometimes any path in the alphabet.
fn existing_path<R: Rng>(rng: &mut R, model: &FlatTree) -> Path {
    if rng.random_bool(0.75) {
        let paths: Vec<&Path> = model.nodes.keys().collect();
        paths.choose(rng).map(|p| (*p).clone()).unwrap_or_default()
    } else {
        random_path(rng)
    }
}

/// Mostly a fresh child of an existing node, within the depth bound.
fn fresh_path<R: Rng>(rng: &mut R, model: &FlatTree) -> Path {
    if rng.random_bool(0.75) {
        let parents: Vec<&Path> = model.nodes.keys().filter(|p| p.len() < 3).collect();
        let mut p = parents.choose(rng).map(|p| (*p).clone()).unwrap_or_default();
        p.push(NAMES.choose(rng).expect("non-empty").to_string());
        p
    } else {
        random_path(rng)
    }
}

fn random_acl<R: Rng>(rng: &mut R) -> String {
    let mut parts = Vec::new();
    for k in KINDS {
        if rng.random_bool(0.3) {
            let ids: Vec<&str> = match rng.random_range(0..4) {
                0 => vec![],
                1 => vec!["*"],
                2 => vec![SERVERS[0]],
                _ => vec![SERVERS[1]],
            };
            parts.push(format!("{k}={}", ids.join("+")));
        }
    }
    parts.join("&")
}

fn random_who<R: Rng>(rng: &mut R) -> Who {
    match rng.random_range(0..4) {
        0 => Who::Device,
        1 => Who::Server(SERVERS[0]),
        _ => Who::Server(SERVERS[1]),
    }
}

/// A random command over a three-letter name alphabet, depth at most three, aimed mostly
/// at nodes that exist in `model`.
pub fn random_op<R: Rng>(rng: &mut R, model: &FlatTree) -> TreeOp {
    let who = random_who(rng);
    match rng.random_range(0..10) {
        0 | 1 => TreeOp::Get {
            uri: existing_path(rng, model),
            who,
        },
        2..=5 => {
            let leaf = rng.random_bool(0.5);
            let format = if rng.random_bool(0.05) {
                *["node", "chr", "bin"].choose(rng).expect("non-empty")
            } else if leaf {
                *["chr", "int", "bin", "bool", "xml"].choose(rng).expect("non-empty")
            } else {
                "node"
            };
            TreeOp::Add {
                uri: fresh_path(rng, model),
                value: leaf.then(|| vec![b'v'; rng.random_range(0..5)]),
                format,
                acl: rng.random_bool(0.3).then(|| random_acl(rng)),
                permanent: rng.random_bool(0.1),
                who,
            }
        }
        6 | 7 => {
            let n = rng.random_range(1..3);
            let changes = (0..n)
                .map(|_| match rng.random_range(0..12) {
                    0..=4 => Change::Value(vec![b'r'; rng.random_range(0..4)]),
                    5 => Change::Title(format!("t{}", rng.random_range(0..3))),
                    6 => Change::Type("application/x-test".into()),
                    7 => Change::Acl(random_acl(rng)),
                    8 => Change::Format(["chr", "int", "node"].choose(rng).expect("non-empty")),
                    9 => Change::Name,
                    10 => Change::Verno,
                    _ => Change::Size,
                })
                .collect();
            TreeOp::Replace {
                uri: existing_path(rng, model),
                changes,
                who,
            }
        }
        8 => TreeOp::Delete {
            uri: existing_path(rng, model),
            who,
        },
        _ => TreeOp::Copy {
            src: existing_path(rng, model),
            dst: fresh_path(rng, model),
            who,
        },
    }
}

/// Real tree and model with the same random root ACL and clock.
pub fn fresh_pair<R: Rng>(rng: &mut R, start: i64) -> (ManagementTree, FlatTree, Clock) {
    let root_acl = if rng.random_bool(0.5) {
        "Get=*&Add=*&Replace=*&Delete=*&Copy=*&Exec=*".to_string()
    } else {
        random_acl(rng)
    };
    let clock = Clock::Manual(std::sync::Arc::new(std::sync::atomic::AtomicI64::new(start)));
    let tree = ManagementTree::empty("SIM-T", root_acl.parse::<Acl>().expect("generated acl"), clock.clone());
    (tree, FlatTree::new(&root_acl, start), clock)
}

fn step(tree: &mut ManagementTree, model: &mut FlatTree, clock: &Clock, op: &TreeOp) -> Result<(), String> {
    clock.advance(1);
    let now = clock.now().timestamp();
    let real = apply_real(tree, op);
    let expected = model.apply(op, now);
    if real != expected {
        return Err(format!("{op:?}: tree {real:?}, model {expected:?}"));
    }
    Ok(())
}

fn compare_final(tree: &ManagementTree, model: &FlatTree) -> Result<(), String> {
    let (real, expected) = (snapshot_real(tree), model.snapshot());
    if real != expected {
        let diff = real.iter().zip(&expected).find(|(a, b)| a != b);
        return Err(format!(
            "final state differs ({} vs {} nodes), first difference {diff:?}",
            real.len(),
            expected.len()
        ));
    }
    Ok(())
}

/// Runs `ops` against both and returns the first divergence, if any.
pub fn compare_run(
    tree: &mut ManagementTree,
    model: &mut FlatTree,
    clock: &Clock,
    ops: &[TreeOp],
) -> Result<(), String> {
    for (i, op) in ops.iter().enumerate() {
        step(tree, model, clock, op).map_err(|e| format!("step {i}: {e}"))?;
    }
    compare_final(tree, model)
}

/// Like [`compare_run`] with `len` commands drawn one at a time against the model's
/// current state. Returns the commands that were run.
pub fn random_run<R: Rng>(
    rng: &mut R,
    tree: &mut ManagementTree,
    model: &mut FlatTree,
    clock: &Clock,
    len: usize,
) -> Result<Vec<TreeOp>, String> {
    let mut ops = Vec::with_capacity(len);
    for i in 0..len {
        let op = random_op(rng, model);
        step(tree, model, clock, &op).map_err(|e| format!("step {i}: {e}"))?;
        ops.push(op);
    }
    compare_final(tree, model)?;
    Ok(ops)
}
