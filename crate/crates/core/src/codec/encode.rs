use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;

use super::{CodecError, DmCommand, DmItem, DmMessage};
use crate::xml::text_element;

fn loc(out: &mut String, wrapper: &str, uri: &str) {
    out.push('<');
    out.push_str(wrapper);
    out.push('>');
    text_element(out, "LocURI", uri);
    out.push_str("</");
    out.push_str(wrapper);
    out.push('>');
}

fn item(out: &mut String, item: &DmItem) {
    out.push_str("<Item>");
    if let Some(target) = &item.target {
        loc(out, "Target", &target.to_string());
    }
    if let Some(source) = &item.source {
        loc(out, "Source", source);
    }
    if let Some(meta) = &item.meta {
        out.push_str("<Meta>");
        if let Some(f) = meta.format {
            text_element(out, "Format", f.as_str());
        }
        if let Some(t) = &meta.mime_type {
            text_element(out, "Type", t);
        }
        if let Some(s) = meta.size {
            text_element(out, "Size", &s.to_string());
        }
        out.push_str("</Meta>");
    }
    if let Some(data) = &item.data {
        if item.is_binary() {
            text_element(out, "Data", &B64.encode(data));
        } else {
            text_element(out, "Data", std::str::from_utf8(data).expect("validated as UTF-8"));
        }
    }
    out.push_str("</Item>");
}

fn number(out: &mut String, name: &str, n: impl ToString) {
    text_element(out, name, &n.to_string());
}

/// Renders a package as its XML wire form. Fails only if the message breaks an invariant.
pub fn encode(msg: &DmMessage) -> Result<Vec<u8>, CodecError> {
    msg.validate()?;
    let h = &msg.header;
    let mut out = String::with_capacity(512);
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?><SyncML><SyncHdr>");
    text_element(&mut out, "VerProto", &format!("DM/{}", h.proto_version));
    text_element(&mut out, "SessionID", &h.session_id);
    number(&mut out, "MsgID", h.msg_id);
    loc(&mut out, "Target", &h.target);
    loc(&mut out, "Source", &h.source);
    if let Some(c) = &h.credentials {
        out.push_str("<Cred><Meta><Type>basic</Type></Meta>");
        text_element(&mut out, "Data", &format!("{}:{}", c.username, c.digest));
        out.push_str("</Cred>");
    }
    out.push_str("</SyncHdr><SyncBody>");
    for cmd in &msg.body {
        let name = cmd.element_name();
        if let DmCommand::Final = cmd {
            out.push_str("<Final/>");
            continue;
        }
        out.push('<');
        out.push_str(name);
        out.push('>');
        number(&mut out, "CmdID", cmd.cmd_id().expect("non-final"));
        match cmd {
            DmCommand::Alert { code, .. } => number(&mut out, "Data", code),
            DmCommand::Status {
                msg_ref,
                cmd_ref,
                cmd,
                code,
                ..
            } => {
                number(&mut out, "MsgRef", msg_ref);
                number(&mut out, "CmdRef", cmd_ref);
                text_element(&mut out, "Cmd", cmd.as_str());
                number(&mut out, "Data", code.code());
            }
            DmCommand::Results {
                msg_ref,
                cmd_ref,
                items,
                ..
            } => {
                number(&mut out, "MsgRef", msg_ref);
                number(&mut out, "CmdRef", cmd_ref);
                items.iter().for_each(|i| item(&mut out, i));
            }
            other => other.items().iter().for_each(|i| item(&mut out, i)),
        }
        out.push_str("</");
        out.push_str(name);
        out.push('>');
    }
    out.push_str("</SyncBody></SyncML>");
    Ok(out.into_bytes())
}
