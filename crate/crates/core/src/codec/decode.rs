use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use roxmltree::{Document, Node};

use super::{AuthScheme, CodecError, Credentials, DmCommand, DmHeader, DmItem, DmMessage, Meta};
use crate::status::StatusCode;
use crate::tree::Format;
use crate::uri::NodeUri;
use crate::xml::{self, position};

struct Ctx<'a, 'input> {
    doc: &'a Document<'input>,
}

impl<'a, 'input> Ctx<'a, 'input> {
    fn err(&self, node: Node<'_, '_>, message: impl Into<String>) -> CodecError {
        let pos = position(self.doc, node);
        CodecError::ParseError {
            line: pos.line,
            column: pos.column,
            message: message.into(),
        }
    }

    fn no_attrs(&self, node: Node<'_, '_>) -> Result<(), CodecError> {
        match node.attributes().next() {
            Some(a) => Err(self.err(node, format!("unexpected attribute {:?}", a.name()))),
            None => Ok(()),
        }
    }

    fn children(&self, node: Node<'a, 'input>) -> Result<Cursor<'a, 'input>, CodecError> {
        self.no_attrs(node)?;
        let items = xml::element_children(node).map_err(|t| self.err(t, "unexpected text content"))?;
        Ok(Cursor {
            parent: node,
            items,
            idx: 0,
        })
    }

    fn text(&self, node: Node<'_, '_>) -> Result<String, CodecError> {
        self.no_attrs(node)?;
        xml::text_only(node).ok_or_else(|| self.err(node, format!("<{}> must hold text only", node.tag_name().name())))
    }

    fn number<T: std::str::FromStr>(&self, node: Node<'_, '_>) -> Result<T, CodecError> {
        let text = self.text(node)?;
        if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(self.err(node, format!("expected a number, found {text:?}")));
        }
        text.parse()
            .map_err(|_| self.err(node, format!("number out of range: {text:?}")))
    }
}

struct Cursor<'a, 'input> {
    parent: Node<'a, 'input>,
    items: Vec<Node<'a, 'input>>,
    idx: usize,
}

impl<'a, 'input> Cursor<'a, 'input> {
    fn optional(&mut self, name: &str) -> Option<Node<'a, 'input>> {
        let node = *self.items.get(self.idx)?;
        if node.tag_name().name() == name {
            self.idx += 1;
            Some(node)
        } else {
            None
        }
    }

    fn expect(&mut self, ctx: &Ctx<'_, '_>, name: &str) -> Result<Node<'a, 'input>, CodecError> {
        self.optional(name).ok_or_else(|| match self.items.get(self.idx) {
            Some(n) => ctx.err(*n, format!("expected <{name}>, found <{}>", n.tag_name().name())),
            None => ctx.err(
                self.parent,
                format!("<{}> is missing <{name}>", self.parent.tag_name().name()),
            ),
        })
    }

    fn finish(&self, ctx: &Ctx<'_, '_>) -> Result<(), CodecError> {
        match self.items.get(self.idx) {
            Some(n) => Err(ctx.err(
                *n,
                format!(
                    "unexpected <{}> in <{}>",
                    n.tag_name().name(),
                    self.parent.tag_name().name()
                ),
            )),
            None => Ok(()),
        }
    }
}

fn loc_uri(ctx: &Ctx<'_, '_>, wrapper: Node<'_, '_>) -> Result<String, CodecError> {
    let mut c = ctx.children(wrapper)?;
    let loc = c.expect(ctx, "LocURI")?;
    c.finish(ctx)?;
    ctx.text(loc)
}

fn item(ctx: &Ctx<'_, '_>, node: Node<'_, '_>) -> Result<DmItem, CodecError> {
    let mut c = ctx.children(node)?;
    let mut out = DmItem::default();
    if let Some(t) = c.optional("Target") {
        let text = loc_uri(ctx, t)?;
        out.target = Some(NodeUri::parse(&text).map_err(|e| ctx.err(t, e.to_string()))?);
    }
    if let Some(s) = c.optional("Source") {
        out.source = Some(loc_uri(ctx, s)?);
    }
    if let Some(m) = c.optional("Meta") {
        let mut mc = ctx.children(m)?;
        let mut meta = Meta::default();
        if let Some(f) = mc.optional("Format") {
            meta.format = Some(ctx.text(f)?.parse().map_err(|e: String| ctx.err(f, e))?);
        }
        if let Some(t) = mc.optional("Type") {
            meta.mime_type = Some(ctx.text(t)?);
        }
        if let Some(s) = mc.optional("Size") {
            meta.size = Some(ctx.number(s)?);
        }
        mc.finish(ctx)?;
        out.meta = Some(meta);
    }
    if let Some(d) = c.optional("Data") {
        let text = ctx.text(d)?;
        out.data = Some(if out.format() == Some(Format::Bin) {
            B64.decode(text.as_bytes())
                .map_err(|e| ctx.err(d, format!("bad base64 data: {e}")))?
        } else {
            text.into_bytes()
        });
    }
    c.finish(ctx)?;
    Ok(out)
}

fn items(ctx: &Ctx<'_, '_>, c: &mut Cursor<'_, '_>) -> Result<Vec<DmItem>, CodecError> {
    let mut out = Vec::new();
    while let Some(n) = c.optional("Item") {
        out.push(item(ctx, n)?);
    }
    Ok(out)
}

fn command(ctx: &Ctx<'_, '_>, node: Node<'_, '_>) -> Result<DmCommand, CodecError> {
    let name = node.tag_name().name();
    if name == "Final" {
        ctx.no_attrs(node)?;
        if node
            .children()
            .any(|c| c.is_element() || (c.is_text() && !c.text().unwrap_or("").trim().is_empty()))
        {
            return Err(ctx.err(node, "<Final> carries no content"));
        }
        return Ok(DmCommand::Final);
    }
    if !matches!(
        name,
        "Alert" | "Get" | "Add" | "Replace" | "Delete" | "Copy" | "Exec" | "Status" | "Results"
    ) {
        let pos = position(ctx.doc, node);
        return Err(CodecError::UnknownCommand {
            name: name.to_string(),
            line: pos.line,
            column: pos.column,
        });
    }
    let mut c = ctx.children(node)?;
    let cmd_id: u32 = ctx.number(c.expect(ctx, "CmdID")?)?;
    let cmd = match name {
        "Alert" => DmCommand::Alert {
            cmd_id,
            code: ctx.number(c.expect(ctx, "Data")?)?,
        },
        "Status" => {
            let msg_ref = ctx.number(c.expect(ctx, "MsgRef")?)?;
            let cmd_ref = ctx.number(c.expect(ctx, "CmdRef")?)?;
            let cmd_el = c.expect(ctx, "Cmd")?;
            let cmd = ctx.text(cmd_el)?.parse().map_err(|e: String| ctx.err(cmd_el, e))?;
            let data = c.expect(ctx, "Data")?;
            let code = StatusCode::from_code(ctx.number(data)?)
                .ok_or_else(|| ctx.err(data, "status code outside the supported set"))?;
            DmCommand::Status {
                cmd_id,
                msg_ref,
                cmd_ref,
                cmd,
                code,
            }
        }
        "Results" => {
            let msg_ref = ctx.number(c.expect(ctx, "MsgRef")?)?;
            let cmd_ref = ctx.number(c.expect(ctx, "CmdRef")?)?;
            DmCommand::Results {
                cmd_id,
                msg_ref,
                cmd_ref,
                items: items(ctx, &mut c)?,
            }
        }
        "Exec" => DmCommand::Exec {
            cmd_id,
            item: item(ctx, c.expect(ctx, "Item")?)?,
        },
        "Get" => DmCommand::Get {
            cmd_id,
            items: items(ctx, &mut c)?,
        },
        "Add" => DmCommand::Add {
            cmd_id,
            items: items(ctx, &mut c)?,
        },
        "Replace" => DmCommand::Replace {
            cmd_id,
            items: items(ctx, &mut c)?,
        },
        "Delete" => DmCommand::Delete {
            cmd_id,
            items: items(ctx, &mut c)?,
        },
        "Copy" => DmCommand::Copy {
            cmd_id,
            items: items(ctx, &mut c)?,
        },
        _ => unreachable!("filtered above"),
    };
    c.finish(ctx)?;
    Ok(cmd)
}

fn header(ctx: &Ctx<'_, '_>, node: Node<'_, '_>) -> Result<DmHeader, CodecError> {
    let mut c = ctx.children(node)?;
    let ver_el = c.expect(ctx, "VerProto")?;
    let ver = ctx.text(ver_el)?;
    let proto_version = ver
        .strip_prefix("DM/")
        .ok_or_else(|| ctx.err(ver_el, format!("unsupported protocol {ver:?}")))?
        .to_string();
    let session_id = ctx.text(c.expect(ctx, "SessionID")?)?;
    let msg_id = ctx.number(c.expect(ctx, "MsgID")?)?;
    let target = loc_uri(ctx, c.expect(ctx, "Target")?)?;
    let source = loc_uri(ctx, c.expect(ctx, "Source")?)?;
    let credentials = match c.optional("Cred") {
        None => None,
        Some(cred) => {
            let mut cc = ctx.children(cred)?;
            let meta = cc.expect(ctx, "Meta")?;
            let mut mc = ctx.children(meta)?;
            let ty = mc.expect(ctx, "Type")?;
            if ctx.text(ty)? != "basic" {
                return Err(ctx.err(ty, "only the basic credential scheme is supported"));
            }
            mc.finish(ctx)?;
            let data_el = cc.expect(ctx, "Data")?;
            cc.finish(ctx)?;
            let data = ctx.text(data_el)?;
            let (username, digest) = data
                .split_once(':')
                .ok_or_else(|| ctx.err(data_el, "credential data must be username:digest"))?;
            Some(Credentials {
                scheme: AuthScheme::Basic,
                username: username.to_string(),
                digest: digest.to_string(),
            })
        }
    };
    c.finish(ctx)?;
    Ok(DmHeader {
        proto_version,
        session_id,
        msg_id,
        source,
        target,
        credentials,
    })
}

/// Parses a package. Never returns a message that fails [`DmMessage::validate`].
pub fn decode(bytes: &[u8]) -> Result<DmMessage, CodecError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CodecError::ParseError {
        line: 0,
        column: 0,
        message: format!("package is not UTF-8: {e}"),
    })?;
    let doc = Document::parse(text).map_err(|e| CodecError::ParseError {
        line: e.pos().row,
        column: e.pos().col,
        message: e.to_string(),
    })?;
    let ctx = Ctx { doc: &doc };
    let root = doc.root_element();
    if root.tag_name().name() != "SyncML" {
        return Err(ctx.err(root, "root element must be <SyncML>"));
    }
    let mut c = ctx.children(root)?;
    let header = header(&ctx, c.expect(&ctx, "SyncHdr")?)?;
    let body_el = c.expect(&ctx, "SyncBody")?;
    c.finish(&ctx)?;
    let bc = ctx.children(body_el)?;
    let body = bc
        .items
        .iter()
        .map(|n| command(&ctx, *n))
        .collect::<Result<Vec<_>, _>>()?;
    let msg = DmMessage { header, body };
    msg.validate()?;
    Ok(msg)
}
