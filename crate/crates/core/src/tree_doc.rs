//! Persistence of a [`ManagementTree`] as an XML document, plus a JSON view for the admin API.
//!
//! ```text
//! <MgmtTree device-id="SIM-0001">
//!   <Node name="." permanence="permanent">
//!     <Props format="node" type="" title="" verno="0" tstamp="2009-01-01T00:00:00Z" size="0"/>
//!     <ACL>Get=*&amp;Delete=srvA+srvB</ACL>
//!     <Node name="DevInfo" permanence="permanent"> ... </Node>
//!   </Node>
//! </MgmtTree>
//! ```
//!
//! Leaf values are literal text, or base64 when the format is `bin`. A non-`bin` value that is
//! not valid XML text is written base64 with `encoding="base64"` on the `Value` element.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use chrono::{DateTime, Utc};
use roxmltree::{Document, Node};
use serde::Serialize;
use thiserror::Error;

use crate::acl::Acl;
use crate::tree::{format_tstamp, Clock, Format, ManagementTree, NodeKind, NodeProperties, Permanence, TreeNode};
use crate::uri::{is_valid_segment, NodeUri};
use crate::xml::{self, escape_attr, escape_text, position, Position};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeDocError {
    #[error("parse error at {line}:{column}: {message}")]
    ParseError { line: u32, column: u32, message: String },
    #[error("schema violation at {line}:{column}: {message}")]
    SchemaViolation { line: u32, column: u32, message: String },
}

fn schema(pos: Position, message: impl Into<String>) -> TreeDocError {
    TreeDocError::SchemaViolation {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

const INDENT: &str = "  ";

fn write_node(out: &mut String, node: &TreeNode, display_name: &str, depth: usize) {
    let pad = INDENT.repeat(depth);
    let p = &node.props;
    out.push_str(&pad);
    out.push_str("<Node name=\"");
    escape_attr(out, display_name);
    out.push_str("\" permanence=\"");
    out.push_str(node.permanence.as_str());
    out.push_str("\">\n");

    out.push_str(&pad);
    out.push_str(INDENT);
    out.push_str("<Props format=\"");
    out.push_str(p.format.as_str());
    out.push_str("\" type=\"");
    escape_attr(out, &p.mime_type);
    out.push_str("\" title=\"");
    escape_attr(out, &p.title);
    out.push_str(&format!(
        "\" verno=\"{}\" tstamp=\"{}\" size=\"{}\"/>\n",
        p.verno,
        format_tstamp(&p.tstamp),
        p.size
    ));

    if !p.acl.is_empty() {
        out.push_str(&pad);
        out.push_str(INDENT);
        out.push_str("<ACL>");
        escape_text(out, &p.acl.to_string());
        out.push_str("</ACL>\n");
    }

    match &node.kind {
        NodeKind::Leaf { value } => {
            out.push_str(&pad);
            out.push_str(INDENT);
            let text = std::str::from_utf8(value).ok().filter(|t| xml::is_xml_text(t));
            match (p.format, text) {
                (Format::Bin, _) => {
                    out.push_str("<Value>");
                    out.push_str(&B64.encode(value));
                }
                (_, Some(text)) => {
                    out.push_str("<Value>");
                    escape_text(out, text);
                }
                (_, None) => {
                    out.push_str("<Value encoding=\"base64\">");
                    out.push_str(&B64.encode(value));
                }
            }
            out.push_str("</Value>\n");
        }
        NodeKind::Interior { children } => {
            for (name, child) in children {
                write_node(out, child, name, depth + 1);
            }
        }
    }
    out.push_str(&pad);
    out.push_str("</Node>\n");
}

/// Renders the tree document. Deterministic: equal trees give equal bytes.
pub fn save(tree: &ManagementTree) -> Vec<u8> {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<MgmtTree device-id=\"");
    escape_attr(&mut out, &tree.device_id);
    out.push_str("\">\n");
    write_node(&mut out, &tree.root, ".", 1);
    out.push_str("</MgmtTree>\n");
    out.into_bytes()
}

fn required_attr<'a>(doc: &Document<'_>, node: Node<'a, '_>, name: &str) -> Result<&'a str, TreeDocError> {
    node.attribute(name).ok_or_else(|| {
        schema(
            position(doc, node),
            format!("<{}> is missing attribute {name:?}", node.tag_name().name()),
        )
    })
}

fn check_attrs(doc: &Document<'_>, node: Node<'_, '_>, allowed: &[&str]) -> Result<(), TreeDocError> {
    for attr in node.attributes() {
        if !allowed.contains(&attr.name()) {
            return Err(schema(
                position(doc, node),
                format!("unexpected attribute {:?} on <{}>", attr.name(), node.tag_name().name()),
            ));
        }
    }
    Ok(())
}

fn parse_num(doc: &Document<'_>, node: Node<'_, '_>, attr: &str) -> Result<u64, TreeDocError> {
    let text = required_attr(doc, node, attr)?;
    text.parse().map_err(|_| {
        schema(
            position(doc, node),
            format!("{attr} is not an unsigned integer: {text:?}"),
        )
    })
}

fn read_node(doc: &Document<'_>, el: Node<'_, '_>, is_root: bool) -> Result<(String, TreeNode), TreeDocError> {
    let pos = || position(doc, el);
    if el.tag_name().name() != "Node" {
        return Err(schema(
            pos(),
            format!("expected <Node>, found <{}>", el.tag_name().name()),
        ));
    }
    check_attrs(doc, el, &["name", "permanence"])?;
    let name = required_attr(doc, el, "name")?.to_string();
    if is_root {
        if name != "." {
            return Err(schema(pos(), "root node must be named \".\""));
        }
    } else if !is_valid_segment(&name) {
        return Err(schema(pos(), format!("invalid node name {name:?}")));
    }
    let permanence = match required_attr(doc, el, "permanence")? {
        "permanent" => Permanence::Permanent,
        "dynamic" => Permanence::Dynamic,
        other => return Err(schema(pos(), format!("invalid permanence {other:?}"))),
    };

    let children = xml::element_children(el).map_err(|t| schema(position(doc, t), "unexpected text content"))?;
    let mut iter = children.into_iter().peekable();

    let props_el = iter
        .next()
        .filter(|c| c.tag_name().name() == "Props")
        .ok_or_else(|| schema(pos(), "<Node> must start with <Props>"))?;
    check_attrs(doc, props_el, &["format", "type", "title", "verno", "tstamp", "size"])?;
    let format: Format = required_attr(doc, props_el, "format")?
        .parse()
        .map_err(|e: String| schema(position(doc, props_el), e))?;
    let mime_type = required_attr(doc, props_el, "type")?.to_string();
    let title = required_attr(doc, props_el, "title")?.to_string();
    let verno = parse_num(doc, props_el, "verno")?;
    let size = parse_num(doc, props_el, "size")?;
    let tstamp_text = required_attr(doc, props_el, "tstamp")?;
    let tstamp: DateTime<Utc> = DateTime::parse_from_rfc3339(tstamp_text)
        .map_err(|e| schema(position(doc, props_el), format!("bad tstamp {tstamp_text:?}: {e}")))?
        .with_timezone(&Utc);

    let mut acl = Acl::new();
    if let Some(acl_el) = iter.next_if(|c| c.tag_name().name() == "ACL") {
        check_attrs(doc, acl_el, &[])?;
        let text = xml::text_only(acl_el).ok_or_else(|| schema(position(doc, acl_el), "<ACL> must hold text"))?;
        acl = text
            .parse()
            .map_err(|e| schema(position(doc, acl_el), format!("bad acl: {e}")))?;
    }

    let kind = if let Some(value_el) = iter.next_if(|c| c.tag_name().name() == "Value") {
        check_attrs(doc, value_el, &["encoding"])?;
        let vpos = position(doc, value_el);
        if format == Format::Node {
            return Err(schema(vpos, "leaf declares format=node"));
        }
        let text = xml::text_only(value_el).ok_or_else(|| schema(vpos.clone(), "<Value> must hold text"))?;
        let base64 = match value_el.attribute("encoding") {
            None => format == Format::Bin,
            Some("base64") => true,
            Some(other) => return Err(schema(vpos, format!("unknown encoding {other:?}"))),
        };
        let value = if base64 {
            B64.decode(text.trim())
                .map_err(|e| schema(vpos.clone(), format!("bad base64: {e}")))?
        } else {
            text.into_bytes()
        };
        if value.len() as u64 != size {
            return Err(schema(
                vpos,
                format!("size {size} does not match value length {}", value.len()),
            ));
        }
        NodeKind::Leaf { value }
    } else {
        if format != Format::Node {
            return Err(schema(pos(), format!("interior node declares format={format}")));
        }
        if size != 0 {
            return Err(schema(pos(), "interior node must have size 0"));
        }
        let mut map = BTreeMap::new();
        for child in iter.by_ref() {
            let (child_name, node) = read_node(doc, child, false)?;
            if map.insert(child_name.clone(), node).is_some() {
                return Err(schema(
                    position(doc, child),
                    format!("duplicate child name {child_name:?}"),
                ));
            }
        }
        NodeKind::Interior { children: map }
    };
    if let Some(extra) = iter.next() {
        return Err(schema(
            position(doc, extra),
            format!("unexpected <{}> in leaf node", extra.tag_name().name()),
        ));
    }

    let node = TreeNode {
        kind,
        props: NodeProperties {
            acl,
            format,
            name: if is_root { String::new() } else { name.clone() },
            size,
            title,
            tstamp,
            mime_type,
            verno,
        },
        permanence,
    };
    Ok((name, node))
}

/// Parses a tree document. The loaded tree uses the system clock.
pub fn load(bytes: &[u8]) -> Result<ManagementTree, TreeDocError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TreeDocError::ParseError {
        line: 0,
        column: 0,
        message: format!("document is not UTF-8: {e}"),
    })?;
    let doc = Document::parse(text).map_err(|e| {
        let pos = e.pos();
        TreeDocError::ParseError {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let top = doc.root_element();
    if top.tag_name().name() != "MgmtTree" {
        return Err(schema(position(&doc, top), "root element must be <MgmtTree>"));
    }
    check_attrs(&doc, top, &["device-id"])?;
    let device_id = required_attr(&doc, top, "device-id")?.to_string();
    let nodes = xml::element_children(top).map_err(|t| schema(position(&doc, t), "unexpected text content"))?;
    let [root_el] = nodes.as_slice() else {
        return Err(schema(
            position(&doc, top),
            "<MgmtTree> must contain exactly one root <Node>",
        ));
    };
    let (_, root) = read_node(&doc, *root_el, true)?;
    if root.permanence != Permanence::Permanent || root.is_leaf() {
        return Err(schema(
            position(&doc, *root_el),
            "root must be a permanent interior node",
        ));
    }
    Ok(ManagementTree {
        root,
        device_id,
        clock: Clock::System,
    })
}

/// JSON rendering of one node for the admin API.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct NodeView {
    pub uri: String,
    pub name: String,
    pub permanence: Permanence,
    pub format: Format,
    #[serde(rename = "type")]
    pub mime_type: String,
    pub title: String,
    pub verno: u64,
    pub tstamp: String,
    pub size: u64,
    pub acl: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoding: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub children: Option<Vec<NodeView>>,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct TreeView {
    pub device_id: String,
    pub root: NodeView,
}

fn view_node(uri: &NodeUri, node: &TreeNode) -> NodeView {
    let p = &node.props;
    let (value, encoding, children) = match &node.kind {
        NodeKind::Leaf { value } => match std::str::from_utf8(value) {
            Ok(text) if p.format != Format::Bin => (Some(text.to_string()), None, None),
            _ => (Some(B64.encode(value)), Some("base64"), None),
        },
        NodeKind::Interior { children } => (
            None,
            None,
            Some(
                children
                    .iter()
                    .map(|(n, c)| view_node(&uri.child(n.clone()).expect("valid stored name"), c))
                    .collect(),
            ),
        ),
    };
    NodeView {
        uri: uri.to_string(),
        name: uri.name().to_string(),
        permanence: node.permanence,
        format: p.format,
        mime_type: p.mime_type.clone(),
        title: p.title.clone(),
        verno: p.verno,
        tstamp: format_tstamp(&p.tstamp),
        size: p.size,
        acl: p.acl.to_string(),
        value,
        encoding,
        children,
    }
}

pub fn view(tree: &ManagementTree) -> TreeView {
    TreeView {
        device_id: tree.device_id.clone(),
        root: view_node(&NodeUri::root(), &tree.root),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{NodeSpec, Requester};
    use chrono::TimeZone;

    fn uri(s: &str) -> NodeUri {
        NodeUri::parse(s).unwrap()
    }

    fn sample() -> ManagementTree {
        let clock = Clock::manual(Utc.with_ymd_and_hms(2009, 1, 1, 0, 0, 0).unwrap());
        let mut t = ManagementTree::empty("dev \"1\"", Acl::allow_all(), clock);
        let d = Requester::Device;
        t.add(&uri("./A"), NodeSpec::interior().permanent().with_title("a & b"), &d)
            .unwrap();
        t.add(&uri("./A/text"), NodeSpec::text("line1\r\nline2 <x>\t"), &d)
            .unwrap();
        t.add(&uri("./A/bin"), NodeSpec::leaf(vec![0u8, 255, 10], Format::Bin), &d)
            .unwrap();
        t.add(&uri("./A/raw"), NodeSpec::leaf(vec![0u8, 1], Format::Chr), &d)
            .unwrap();
        t.add(&uri("./A/empty"), NodeSpec::text(""), &d).unwrap();
        t
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let t = sample();
        let bytes = save(&t);
        let loaded = load(&bytes).unwrap();
        assert_eq!(loaded, t);
        assert_eq!(save(&loaded), bytes);
    }

    #[test]
    fn leaf_with_node_format_is_schema_violation() {
        let doc = br#"<MgmtTree device-id="d"><Node name="." permanence="permanent">
            <Props format="node" type="" title="" verno="0" tstamp="2009-01-01T00:00:00Z" size="0"/>
            <Node name="x" permanence="dynamic">
              <Props format="node" type="" title="" verno="0" tstamp="2009-01-01T00:00:00Z" size="1"/>
              <Value>a</Value>
            </Node></Node></MgmtTree>"#;
        assert!(matches!(load(doc), Err(TreeDocError::SchemaViolation { .. })));
    }

    #[test]
    fn missing_verno_is_schema_violation() {
        let doc = br#"<MgmtTree device-id="d"><Node name="." permanence="permanent">
            <Props format="node" type="" title="" tstamp="2009-01-01T00:00:00Z" size="0"/>
            </Node></MgmtTree>"#;
        match load(doc) {
            Err(TreeDocError::SchemaViolation { message, line, .. }) => {
                assert!(message.contains("verno"));
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_document_is_parse_error() {
        let bytes = save(&sample());
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(load(cut), Err(TreeDocError::ParseError { .. })));
    }

    #[test]
    fn json_view_marks_binary() {
        let v = view(&sample());
        let json = serde_json::to_value(&v).unwrap();
        let a = &json["root"]["children"][0];
        assert_eq!(a["uri"], "./A");
        let bin = a["children"]
            .as_array()
            .unwrap()
            .iter()
            .find(|n| n["name"] == "bin")
            .unwrap();
        assert_eq!(bin["encoding"], "base64");
    }
}
